import { describe, expect, it } from "vitest";

import { ApiClient, ApiError, NextItem } from "../src/api.js";
import { SessionMachine } from "../src/session.js";
import { FakeServer, twelveItemGroup } from "./fake_server.js";

function setup(sessions: Record<string, string[]> = { tok1: ["ax_er"] }) {
  const server = new FakeServer([twelveItemGroup()], sessions);
  const api = new ApiClient("", server.fetch);
  return { server, api };
}

describe("full session", () => {
  it("answers all 12 items and leaves exactly 12 server records", async () => {
    const { server, api } = setup();
    const machine = new SessionMachine(api, "tok1");
    await machine.start();

    const seen: string[] = [];
    for (let i = 0; i < 12; i++) {
      const state = machine.getState();
      expect(state.phase).toBe("item");
      expect(state.progress).toEqual({ answered: i, total: 12 });
      expect(state.item!.options).toHaveLength(4);
      seen.push(state.item!.item_id);
      machine.markPlayed();
      const outcome = await machine.choose(((i % 4) + 1) as 1 | 2 | 3 | 4);
      expect(outcome).toEqual({ ok: true, done: i === 11 });
    }

    expect(machine.getState().phase).toBe("done");
    expect(machine.getState().progress).toEqual({ answered: 12, total: 12 });
    expect(server.recordsFor("tok1")).toHaveLength(12);
    expect(new Set(seen).size).toBe(12);
    // follows the server's presentation order exactly
    expect(seen).toEqual(server.sequence("tok1"));
  });
});

describe("playback gate", () => {
  it("blocks submission before the clip has been played", async () => {
    const { server, api } = setup();
    const machine = new SessionMachine(api, "tok1");
    await machine.start();

    const outcome = await machine.choose(1);
    expect(outcome).toEqual({ ok: false, reason: "not-played" });
    expect(server.posts).toBe(0);
    expect(machine.getState().phase).toBe("item");

    machine.markPlayed();
    expect((await machine.choose(1)).ok).toBe(true);
    expect(server.posts).toBe(1);
  });
});

describe("idempotent submission", () => {
  it("collapses a double-click into one POST", async () => {
    const { server, api } = setup();
    const machine = new SessionMachine(api, "tok1");
    await machine.start();
    machine.markPlayed();

    const [first, second] = await Promise.all([machine.choose(2), machine.choose(2)]);
    expect(first).toEqual({ ok: true, done: false });
    expect(second).toEqual({ ok: false, reason: "busy" });
    expect(server.posts).toBe(1);
    expect(server.recordsFor("tok1")).toHaveLength(1);
  });
});

describe("resume", () => {
  it("a fresh machine resumes at the server cursor without duplicates", async () => {
    const { server, api } = setup();
    const first = new SessionMachine(api, "tok1");
    await first.start();
    for (let i = 0; i < 5; i++) {
      first.markPlayed();
      await first.choose(1);
    }

    // reload: new machine over the same server state
    const second = new SessionMachine(api, "tok1");
    await second.start();
    const state = second.getState();
    expect(state.phase).toBe("item");
    expect(state.progress).toEqual({ answered: 5, total: 12 });
    expect(state.item!.item_id).toBe(server.sequence("tok1")[5]);
    expect(state.played).toBe(false); // playback gate re-arms after reload

    for (let i = 5; i < 12; i++) {
      second.markPlayed();
      await second.choose(3);
    }
    expect(second.getState().phase).toBe("done");
    expect(server.recordsFor("tok1")).toHaveLength(12);
    const distinct = new Set(server.recordsFor("tok1").map((r) => r.item_id));
    expect(distinct.size).toBe(12);
  });
});

describe("network failure", () => {
  it("keeps the same item current and retries cleanly", async () => {
    const { server, api } = setup();
    const machine = new SessionMachine(api, "tok1");
    await machine.start();
    const itemId = machine.getState().item!.item_id;
    machine.markPlayed();

    server.failNextRequest = true;
    const outcome = await machine.choose(4);
    expect(outcome.ok).toBe(false);
    if (!outcome.ok) expect(outcome.reason).toBe("network");
    expect(server.recordsFor("tok1")).toHaveLength(0);

    const state = machine.getState();
    expect(state.phase).toBe("item");
    expect(state.item!.item_id).toBe(itemId); // same item
    expect(state.played).toBe(true); // no need to replay

    const retried = await machine.choose(4);
    expect(retried).toEqual({ ok: true, done: false });
    expect(server.recordsFor("tok1")).toHaveLength(1);
    expect(server.recordsFor("tok1")[0].item_id).toBe(itemId);
  });

  it("start() reports failure and can be retried", async () => {
    const { server, api } = setup();
    server.failNextRequest = true;
    const machine = new SessionMachine(api, "tok1");
    await machine.start();
    expect(machine.getState().phase).toBe("failed");
    await machine.start();
    expect(machine.getState().phase).toBe("item");
  });
});

describe("server rejections", () => {
  it("an unknown token fails the session with the server message", async () => {
    const { api } = setup();
    const machine = new SessionMachine(api, "ghost");
    await machine.start();
    const state = machine.getState();
    expect(state.phase).toBe("failed");
    expect(state.error).toContain("unknown");
  });

  it("maps non-2xx responses to ApiError", async () => {
    const { api } = setup();
    await expect(api.session("ghost")).rejects.toThrowError(ApiError);
    await expect(api.session("ghost")).rejects.toMatchObject({ status: 404 });
  });
});

describe("information hygiene", () => {
  it("exposes nothing beyond item id, audio URL, options, and progress", async () => {
    const { api } = setup();
    const machine = new SessionMachine(api, "tok1");
    await machine.start();
    const item = machine.getState().item as NextItem;
    expect(Object.keys(item).sort()).toEqual(
      ["audio_url", "done", "item_id", "options", "progress"].sort(),
    );
    const blob = JSON.stringify(item);
    expect(blob).not.toContain("true_class");
    expect(blob).not.toContain("noncat");
    expect(blob).not.toContain("cat_");
  });
});
