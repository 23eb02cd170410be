import { describe, expect, it, vi } from "vitest";

import { ApiError, HubClient, OfflineError, validateSpawnForm } from "../src/api.js";
import { DEFAULT_SPAWN } from "../src/types.js";

type Call = { url: string; init: RequestInit | undefined };

/** fetch stub that replays canned (status, body) pairs and records calls. */
function stubFetch(...responses: Array<[number, unknown]>) {
  const calls: Call[] = [];
  const fn = vi.fn(async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    const next = responses.shift();
    if (next === undefined) throw new Error("stub ran out of responses");
    const [status, body] = next;
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  });
  return { fn, calls };
}

const TOKEN_BODY = { token: "tok-abc", username: "alice", expires_at: 9999 };

describe("login", () => {
  it("posts credentials without auth and stores the returned token", async () => {
    const { fn, calls } = stubFetch([200, TOKEN_BODY]);
    const client = new HubClient("http://hub", fn);
    const tok = await client.login("alice", "pw-alice");

    expect(tok.token).toBe("tok-abc");
    expect(client.token).toBe("tok-abc");
    expect(calls[0]!.url).toBe("http://hub/hub/api/login");
    const headers = calls[0]!.init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBeUndefined();
    expect(JSON.parse(String(calls[0]!.init?.body))).toEqual({
      username: "alice",
      secret: "pw-alice",
    });
  });

  it("maps a 401 to an ApiError with the server's verbatim name and detail", async () => {
    const { fn } = stubFetch([401, { error: "AuthFailed", detail: "bad credentials" }]);
    const client = new HubClient("", fn);
    const err = await client.login("alice", "wrong").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).errorName).toBe("AuthFailed");
    expect((err as ApiError).detail).toBe("bad credentials");
    expect(client.token).toBeNull();
  });
});

describe("authenticated calls", () => {
  it("sends the bearer token on every request", async () => {
    const { fn, calls } = stubFetch([200, TOKEN_BODY], [200, { sessions: [] }]);
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    await client.listSessions();
    const headers = calls[1]!.init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Bearer tok-abc");
  });

  it("refuses to call the API at all without a token", async () => {
    const { fn } = stubFetch();
    const client = new HubClient("", fn);
    const err = await client.listSessions().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).errorName).toBe("Unauthorized");
    // the invariant: the request never left the client
    expect(fn).not.toHaveBeenCalled();
  });

  it("logout drops the token so the next call is blocked client-side", async () => {
    const { fn } = stubFetch([200, TOKEN_BODY]);
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    client.logout();
    await expect(client.listSessions()).rejects.toBeInstanceOf(ApiError);
    expect(fn).toHaveBeenCalledTimes(1); // just the login
  });

  it("URL-encodes session ids and usernames", async () => {
    const { fn, calls } = stubFetch([200, TOKEN_BODY], [200, {}], [200, {}]);
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    await client.getSession("sess/../weird");
    await client.quotaFor("alice");
    expect(calls[1]!.url).toBe("/hub/api/sessions/sess%2F..%2Fweird");
    expect(calls[2]!.url).toBe("/hub/api/quota/alice");
  });

  it("spawn posts the form values and returns the session view", async () => {
    const view = { session_id: "s1", state: "PENDING" };
    const { fn, calls } = stubFetch([200, TOKEN_BODY], [200, view]);
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    const out = await client.spawn(DEFAULT_SPAWN);
    expect(out.session_id).toBe("s1");
    expect(calls[1]!.init?.method).toBe("POST");
    expect(JSON.parse(String(calls[1]!.init?.body))).toEqual(DEFAULT_SPAWN);
  });

  it("stop issues a DELETE on the session", async () => {
    const { fn, calls } = stubFetch([200, TOKEN_BODY], [200, { state: "STOPPING" }]);
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    await client.stopSession("s1");
    expect(calls[1]!.init?.method).toBe("DELETE");
    expect(calls[1]!.url).toBe("/hub/api/sessions/s1");
  });
});

describe("error mapping", () => {
  it("wraps structured domain errors verbatim", async () => {
    const { fn } = stubFetch(
      [200, TOKEN_BODY],
      [409, { error: "AlreadyRunning", detail: "alice already has session s1" }],
    );
    const client = new HubClient("", fn);
    await client.login("alice", "pw-alice");
    const err = await client.spawn(DEFAULT_SPAWN).catch((e: unknown) => e);
    expect((err as ApiError).message).toBe(
      "AlreadyRunning: alice already has session s1",
    );
    expect((err as ApiError).status).toBe(409);
  });

  it("falls back to HTTP<status> when the body is not structured", async () => {
    const fn = vi.fn(async () =>
      new Response("<html>gateway</html>", { status: 502 }),
    );
    const client = new HubClient("", fn);
    client.token = "tok";
    const err = await client.listSessions().catch((e: unknown) => e);
    expect((err as ApiError).errorName).toBe("HTTP502");
  });

  it("turns a thrown fetch into OfflineError", async () => {
    const fn = vi.fn(async () => {
      throw new TypeError("fetch failed");
    });
    const client = new HubClient("", fn);
    client.token = "tok";
    const err = await client.listSessions().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(OfflineError);
  });
});

describe("spawn form validation", () => {
  it("accepts the defaults", () => {
    expect(validateSpawnForm(DEFAULT_SPAWN)).toBeNull();
  });

  it.each([
    [{ duration: 0 }, "duration"],
    [{ duration: -5 }, "duration"],
    [{ duration: NaN }, "duration"],
    [{ cpus: 0 }, "cpus"],
    [{ memory: 63 }, "memory"],
    [{ image: "  " }, "image"],
    [{ queue: "" }, "queue"],
  ])("rejects %o", (patch, field) => {
    const message = validateSpawnForm({ ...DEFAULT_SPAWN, ...patch });
    expect(message).not.toBeNull();
    expect(message).toContain(field);
  });

  it("accepts the documented minimums", () => {
    expect(
      validateSpawnForm({ ...DEFAULT_SPAWN, duration: 1, cpus: 1, memory: 64 }),
    ).toBeNull();
  });
});
