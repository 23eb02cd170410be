import type { PanelState } from "./state.js";
import { DEFAULT_SPAWN, TERMINAL_STATES } from "./types.js";

/**
 * Pure string renderer: PanelState in, HTML out. No DOM access here, so
 * the tests can assert on markup for every state the reducer can reach.
 */

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function renderBanner(state: PanelState): string {
  const parts: string[] = [];
  if (state.offline) {
    parts.push(
      `<div class="banner banner-offline" data-id="offline">` +
        `hub unreachable — retrying</div>`,
    );
  }
  if (state.banner !== null) {
    parts.push(
      `<div class="banner banner-error" data-id="error">` +
        `<span>${esc(state.banner)}</span>` +
        `<button data-action="dismiss">dismiss</button></div>`,
    );
  }
  return parts.join("");
}

function renderLogin(state: PanelState): string {
  const note = state.needsLogin
    ? `<p class="note" data-id="relogin">Your session expired — log in again.</p>`
    : "";
  return `
<section class="login" data-id="login-form">
  <h1>hubgate</h1>
  ${note}
  <form data-form="login">
    <label>username <input name="username" autocomplete="username"></label>
    <label>password <input name="secret" type="password" autocomplete="current-password"></label>
    <button type="submit">log in</button>
  </form>
</section>`;
}

function renderSpawnForm(): string {
  const d = DEFAULT_SPAWN;
  return `
<section class="spawn" data-id="spawn-form">
  <h2>start a session</h2>
  <form data-form="spawn">
    <label>duration (min) <input name="duration" type="number" value="${d.duration}"></label>
    <label>queue <input name="queue" value="${esc(d.queue)}"></label>
    <label>cpus <input name="cpus" type="number" value="${d.cpus}"></label>
    <label>memory (MiB) <input name="memory" type="number" value="${d.memory}"></label>
    <label>disk quota (MiB) <input name="disk_quota" type="number" value="${d.disk_quota}"></label>
    <label>image <input name="image" value="${esc(d.image)}"></label>
    <button type="submit">spawn</button>
  </form>
</section>`;
}

function renderTimeline(timeline: string[]): string {
  if (timeline.length === 0) return "";
  const steps = timeline
    .map((s) => `<li class="step step-${esc(s.toLowerCase())}">${esc(s)}</li>`)
    .join("");
  return `<ol class="timeline" data-id="timeline">${steps}</ol>`;
}

function renderSession(state: PanelState): string {
  const session = state.session;
  if (session === null) return renderSpawnForm();

  const st = session.state;
  const pieces: string[] = [
    `<h2>session <code>${esc(session.session_id)}</code></h2>`,
    `<p class="state state-${esc(st.toLowerCase())}" data-id="state">${esc(st)}</p>`,
    renderTimeline(state.timeline),
  ];

  // The one place a link may appear. Anything else — PENDING, STARTING,
  // FAILED with a half-populated url — must never render one.
  if (st === "RUNNING" && session.url !== null) {
    pieces.push(
      `<a class="open" data-id="session-link" href="${esc(session.url)}">open session</a>`,
    );
  }

  if (st === "FAILED") {
    const reason = session.failure_reason ?? "unknown failure";
    pieces.push(
      `<p class="failure" data-id="failure-reason">${esc(reason)}</p>`,
      `<button data-action="retry" data-id="retry">try again</button>`,
    );
  } else if (st === "STOPPED") {
    pieces.push(`<button data-action="retry" data-id="retry">start another</button>`);
  }

  if (!TERMINAL_STATES.has(st)) {
    const label = state.stopping ? "stopping…" : "stop";
    const attr = state.stopping ? " disabled" : "";
    pieces.push(
      `<button data-action="stop" data-id="stop"${attr}>${label}</button>`,
    );
  }

  return `<section class="session" data-id="session-card">${pieces.join("\n")}</section>`;
}

function renderQuota(state: PanelState): string {
  const quota = state.quota;
  if (quota === null) return "";
  const pct = Math.min(100, quota.percent);
  const warn = quota.percent >= 90 ? " quota-warn" : "";
  return `
<section class="quota" data-id="quota">
  <h2>storage</h2>
  <div class="bar${warn}"><div class="fill" style="width: ${pct.toFixed(1)}%"></div></div>
  <p>${quota.used} / ${quota.quota} MiB (${quota.percent.toFixed(1)}%)</p>
</section>`;
}

export function render(state: PanelState): string {
  if (state.token === null) {
    return renderBanner(state) + renderLogin(state);
  }
  const who = `
<header data-id="header">
  <span>signed in as <strong>${esc(state.username ?? "")}</strong></span>
  <button data-action="logout">log out</button>
</header>`;
  return renderBanner(state) + who + renderSession(state) + renderQuota(state);
}
