// Shapes of the hub API payloads the panel consumes. Kept in sync by the
// recorded-sequence tests, which replay real server responses.

export interface TokenResponse {
  token: string;
  username: string;
  expires_at: number;
}

export interface SessionView {
  session_id: string;
  username: string;
  spawner_kind: string;
  state: string;
  backend: [string, number] | null;
  created_at: number;
  last_transition: number;
  failure_reason: string | null;
  url: string | null;
}

export interface QuotaRow {
  username: string;
  used: number;
  quota: number;
  percent: number;
  flagged: boolean;
}

export interface SpawnFormValues {
  duration: number;
  queue: string;
  cpus: number;
  memory: number;
  disk_quota: number;
  image: string;
}

export const DEFAULT_SPAWN: SpawnFormValues = {
  duration: 120,
  queue: "interactive",
  cpus: 1,
  memory: 2048,
  disk_quota: 1024,
  image: "datascience",
};

/** Lifecycle states a session card can show, in forward order. */
export const LIFECYCLE = [
  "PENDING",
  "SCHEDULED",
  "STARTING",
  "READY",
  "RUNNING",
] as const;

export const TERMINAL_STATES = new Set(["STOPPED", "FAILED"]);
