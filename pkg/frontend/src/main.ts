import { ApiError, HubClient, OfflineError, validateSpawnForm } from "./api.js";
import { Poller } from "./poller.js";
import { render } from "./render.js";
import {
  initialState,
  reduce,
  shouldPoll,
  type PanelEvent,
  type PanelState,
} from "./state.js";
import { DEFAULT_SPAWN, TERMINAL_STATES, type SpawnFormValues } from "./types.js";

const TOKEN_KEY = "hubgate.token";
const USER_KEY = "hubgate.username";

/**
 * Wires the pure pieces (reducer, renderer, poller, client) to a real DOM
 * node. Exported so the wiring itself can be driven from tests; the bottom
 * of this file is the only code that assumes a browser.
 */
export function mountPanel(root: HTMLElement, client: HubClient): () => void {
  let state: PanelState = initialState();

  const poller = new Poller({
    tick: async () => {
      const session = state.session;
      if (session === null || state.token === null) return true;
      try {
        const fresh = await client.getSession(session.session_id);
        dispatch({ kind: "online" });
        dispatch({ kind: "session_update", session: fresh });
        if (state.username !== null) {
          const quota = await client.quotaFor(state.username);
          dispatch({ kind: "quota_update", quota });
        }
        return true;
      } catch (err) {
        return handleError(err);
      }
    },
  });

  function paint(): void {
    root.innerHTML = render(state);
    if (shouldPoll(state)) {
      poller.start();
    } else {
      poller.stop();
    }
  }

  function dispatch(event: PanelEvent): void {
    state = reduce(state, event);
    if (event.kind === "login_ok") {
      sessionStorage.setItem(TOKEN_KEY, event.token);
      sessionStorage.setItem(USER_KEY, event.username);
    } else if (event.kind === "logout" || state.needsLogin) {
      sessionStorage.removeItem(TOKEN_KEY);
      sessionStorage.removeItem(USER_KEY);
      client.logout();
    }
    paint();
  }

  /** Maps a thrown error onto panel events; returns the poller verdict. */
  function handleError(err: unknown): boolean {
    if (err instanceof OfflineError) {
      dispatch({ kind: "offline" });
      return false;
    }
    if (err instanceof ApiError) {
      if (err.errorName === "UnknownSession") {
        dispatch({ kind: "session_gone" });
      } else {
        dispatch({ kind: "api_error", error: err.errorName, detail: err.detail });
      }
      return true;
    }
    dispatch({ kind: "api_error", error: "PanelError", detail: String(err) });
    return true;
  }

  async function refresh(): Promise<void> {
    if (state.username === null) return;
    try {
      const sessions = await client.listSessions();
      const mine = sessions.filter((s) => s.username === state.username);
      const live = mine.find((s) => !TERMINAL_STATES.has(s.state));
      if (live !== undefined) {
        dispatch({ kind: "spawn_ok", session: live });
      }
      const quota = await client.quotaFor(state.username);
      dispatch({ kind: "quota_update", quota });
    } catch (err) {
      handleError(err);
    }
  }

  async function doLogin(form: HTMLFormElement): Promise<void> {
    const data = new FormData(form);
    const username = String(data.get("username") ?? "").trim();
    const secret = String(data.get("secret") ?? "");
    if (username === "") {
      dispatch({ kind: "api_error", error: "InvalidOptions", detail: "username is required" });
      return;
    }
    try {
      const tok = await client.login(username, secret);
      dispatch({ kind: "login_ok", token: tok.token, username: tok.username });
      await refresh();
    } catch (err) {
      handleError(err);
    }
  }

  async function doSpawn(form: HTMLFormElement): Promise<void> {
    const data = new FormData(form);
    const num = (name: string, fallback: number): number => {
      const raw = String(data.get(name) ?? "").trim();
      return raw === "" ? fallback : Number(raw);
    };
    const values: SpawnFormValues = {
      duration: num("duration", DEFAULT_SPAWN.duration),
      queue: String(data.get("queue") ?? DEFAULT_SPAWN.queue).trim(),
      cpus: num("cpus", DEFAULT_SPAWN.cpus),
      memory: num("memory", DEFAULT_SPAWN.memory),
      disk_quota: num("disk_quota", DEFAULT_SPAWN.disk_quota),
      image: String(data.get("image") ?? DEFAULT_SPAWN.image).trim(),
    };
    const problem = validateSpawnForm(values);
    if (problem !== null) {
      // blocked client-side: the request never leaves the browser
      dispatch({ kind: "api_error", error: "InvalidOptions", detail: problem });
      return;
    }
    try {
      const session = await client.spawn(values);
      dispatch({ kind: "spawn_ok", session });
    } catch (err) {
      handleError(err);
    }
  }

  async function doStop(): Promise<void> {
    const session = state.session;
    if (session === null) return;
    dispatch({ kind: "stop_requested" });
    try {
      const fresh = await client.stopSession(session.session_id);
      dispatch({ kind: "session_update", session: fresh });
    } catch (err) {
      handleError(err);
    }
  }

  root.addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    event.preventDefault();
    if (form.dataset["form"] === "login") void doLogin(form);
    if (form.dataset["form"] === "spawn") void doSpawn(form);
  });

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset["action"];
    if (action === "stop") void doStop();
    if (action === "retry") dispatch({ kind: "reset_session" });
    if (action === "logout") dispatch({ kind: "logout" });
    if (action === "dismiss") dispatch({ kind: "dismiss_banner" });
  });

  // Rehydrate a token stashed by a previous page load in this tab. The
  // token never touches localStorage, so closing the tab forgets it.
  const savedToken = sessionStorage.getItem(TOKEN_KEY);
  const savedUser = sessionStorage.getItem(USER_KEY);
  if (savedToken !== null && savedUser !== null) {
    client.token = savedToken;
    dispatch({ kind: "login_ok", token: savedToken, username: savedUser });
    void refresh();
  } else {
    paint();
  }

  return () => poller.stop();
}

declare const process: unknown;

// Only self-mount in a browser; under vitest/node the importer drives mountPanel.
if (typeof document !== "undefined" && typeof process === "undefined") {
  const root = document.getElementById("panel-root");
  if (root !== null) {
    mountPanel(root, new HubClient(""));
  }
}
