import type { QuotaRow, SessionView } from "../src/types.js";

let counter = 0;

export function sessionView(overrides: Partial<SessionView> = {}): SessionView {
  counter += 1;
  return {
    session_id: `sess-${counter.toString().padStart(4, "0")}`,
    username: "alice",
    spawner_kind: "swarm",
    state: "PENDING",
    backend: null,
    created_at: 100,
    last_transition: 100,
    failure_reason: null,
    url: null,
    ...overrides,
  };
}

export function runningView(overrides: Partial<SessionView> = {}): SessionView {
  return sessionView({
    state: "RUNNING",
    backend: ["m1", 32000],
    url: "/user/alice/",
    ...overrides,
  });
}

export function quotaRow(overrides: Partial<QuotaRow> = {}): QuotaRow {
  return {
    username: "alice",
    used: 100,
    quota: 1024,
    percent: 9.8,
    flagged: false,
    ...overrides,
  };
}
