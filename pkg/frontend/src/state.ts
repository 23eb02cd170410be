import type { QuotaRow, SessionView } from "./types.js";
import { TERMINAL_STATES } from "./types.js";

/**
 * The panel's entire view state. It is a pure fold over API responses:
 * nothing in here is ever derived from anything but events, which is what
 * lets the recorded-sequence tests replay a server conversation and check
 * the rendered machine against the hub's own transition table.
 */
export interface PanelState {
  token: string | null;
  username: string | null;
  session: SessionView | null;
  /** Distinct lifecycle states observed for the current session, in order. */
  timeline: string[];
  quota: QuotaRow | null;
  /** Error banner (verbatim "Name: detail" from the API), or null. */
  banner: string | null;
  offline: boolean;
  /** Set when the token went stale; the UI shows a re-login prompt. */
  needsLogin: boolean;
  stopping: boolean;
}

export type PanelEvent =
  | { kind: "login_ok"; token: string; username: string }
  | { kind: "spawn_ok"; session: SessionView }
  | { kind: "session_update"; session: SessionView }
  | { kind: "session_gone" }
  | { kind: "stop_requested" }
  | { kind: "quota_update"; quota: QuotaRow }
  | { kind: "api_error"; error: string; detail: string }
  | { kind: "dismiss_banner" }
  | { kind: "offline" }
  | { kind: "online" }
  | { kind: "reset_session" }
  | { kind: "logout" };

// An unknown/expired bearer token comes back as Unauthorized; AuthFailed is
// bad credentials at the login form and Forbidden is a permission error, so
// neither of those should bounce the user back to the login screen.
const STALE_TOKEN_ERRORS = new Set(["Unauthorized"]);

export function initialState(): PanelState {
  return {
    token: null,
    username: null,
    session: null,
    timeline: [],
    quota: null,
    banner: null,
    offline: false,
    needsLogin: false,
    stopping: false,
  };
}

export function reduce(state: PanelState, event: PanelEvent): PanelState {
  switch (event.kind) {
    case "login_ok":
      return {
        ...initialState(),
        token: event.token,
        username: event.username,
      };

    case "spawn_ok":
      return {
        ...state,
        session: event.session,
        timeline: [event.session.state],
        banner: null,
        stopping: false,
      };

    case "session_update": {
      const last = state.timeline[state.timeline.length - 1];
      const timeline =
        last === event.session.state
          ? state.timeline
          : [...state.timeline, event.session.state];
      return {
        ...state,
        session: event.session,
        timeline,
        offline: false,
        stopping: state.stopping && !TERMINAL_STATES.has(event.session.state),
      };
    }

    case "session_gone":
      // UnknownSession from the API: the card is simply gone
      return { ...state, session: null, timeline: [], stopping: false };

    case "stop_requested":
      return { ...state, stopping: true };

    case "quota_update":
      return { ...state, quota: event.quota };

    case "api_error": {
      if (STALE_TOKEN_ERRORS.has(event.error)) {
        return { ...state, token: null, needsLogin: true, stopping: false };
      }
      return { ...state, banner: `${event.error}: ${event.detail}` };
    }

    case "dismiss_banner":
      return { ...state, banner: null };

    case "offline":
      return { ...state, offline: true };

    case "online":
      return { ...state, offline: false };

    case "reset_session":
      // "try again" after FAILED, or "start another" after STOPPED
      return { ...state, session: null, timeline: [], banner: null };

    case "logout":
      return initialState();
  }
}

/** True while the panel should keep polling the session endpoint. */
export function shouldPoll(state: PanelState): boolean {
  return (
    state.session !== null &&
    state.token !== null &&
    !TERMINAL_STATES.has(state.session.state)
  );
}
