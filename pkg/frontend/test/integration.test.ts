// End-to-end against the real backend: spawn the listening service in a
// child process, then drive a scripted session over plain HTTP.

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, SessionState } from "../src/api.js";
import { SessionMachine } from "../src/session.js";

const SERVER_SCRIPT = `
import sys, tempfile
from pathlib import Path

import numpy as np

from sppg.audio import AudioSignal, write_wav
from sppg.perceptual import build_group
from sppg.service import ListeningService, make_server

root = Path(tempfile.mkdtemp(prefix="listenui_"))
audio_dir = root / "clips"
audio_dir.mkdir()

group = build_group(
    "ax_er",
    [f"n{i}:0" for i in range(8)],
    [f"a{i}:0" for i in range(5)],
    [f"e{i}:0" for i in range(5)],
    seed=3,
)
t = np.arange(4800) / 16000.0
for i, item in enumerate(group.items):
    clip = AudioSignal(samples=0.3 * np.sin(2 * np.pi * (300 + 40 * i) * t),
                       sample_rate_hz=16000)
    write_wav(audio_dir / item.audio_path, clip)

sessions = {"tok1": ["ax_er"], "tok2": ["ax_er"], "tok3": ["ax_er"]}
service = ListeningService([group], sessions, root / "responses.jsonl", audio_dir)
server = make_server(service, port=0)
print(f"PORT {server.server_address[1]}", flush=True)
server.serve_forever()
`;

let child: ChildProcess;
let base = "";

beforeAll(async () => {
  child = spawn("python3", ["-c", SERVER_SCRIPT], { stdio: ["ignore", "pipe", "pipe"] });
  const port = await new Promise<number>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("server did not start")), 15000);
    let buffer = "";
    child.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/PORT (\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(Number(match[1]));
      }
    });
    child.stderr!.on("data", (chunk: Buffer) => {
      process.stderr.write(chunk);
    });
    child.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early with code ${code}`));
    });
  });
  base = `http://127.0.0.1:${port}`;
});

afterAll(() => {
  child?.kill();
});

describe("against the real service", () => {
  it("a scripted 12-item session produces exactly 12 server-side records", async () => {
    const api = new ApiClient(base);
    const machine = new SessionMachine(api, "tok1");
    await machine.start();

    // the playback gate holds before any clip has been heard
    expect(await machine.choose(1)).toEqual({ ok: false, reason: "not-played" });

    for (let i = 0; i < 12; i++) {
      const state = machine.getState();
      expect(state.phase).toBe("item");
      expect(state.progress.answered).toBe(i);

      // "play" the clip: fetch the audio bytes like the <audio> element would
      const audio = await fetch(api.audioUrl(state.item!));
      expect(audio.status).toBe(200);
      const bytes = new Uint8Array(await audio.arrayBuffer());
      expect(String.fromCharCode(...bytes.slice(0, 4))).toBe("RIFF");
      machine.markPlayed();

      const outcome = await machine.choose(((i % 4) + 1) as 1 | 2 | 3 | 4);
      expect(outcome.ok).toBe(true);
    }

    expect(machine.getState().phase).toBe("done");
    const session = (await api.session("tok1")) as SessionState;
    expect(session.answered).toBe(12);
    expect(session.done).toBe(true);

    const report = (await api.report()) as {
      patterns: Record<string, { n: number } | null>;
      rejected: number;
    };
    expect(report.rejected).toBe(0);
    // 6 of the 12 items are non-category items, which is what the
    // per-pattern row counts
    expect(report.patterns.ax_er?.n).toBe(6);
  });

  it("resumes mid-session at the server cursor", async () => {
    const api = new ApiClient(base);
    const first = new SessionMachine(api, "tok2");
    await first.start();
    const answeredFirst: string[] = [];
    for (let i = 0; i < 5; i++) {
      answeredFirst.push(first.getState().item!.item_id);
      first.markPlayed();
      await first.choose(2);
    }

    // simulate a reload: brand-new machine, same token
    const second = new SessionMachine(api, "tok2");
    await second.start();
    const resumed = second.getState();
    expect(resumed.phase).toBe("item");
    expect(resumed.progress).toEqual({ answered: 5, total: 12 });
    expect(answeredFirst).not.toContain(resumed.item!.item_id);
    expect(resumed.played).toBe(false);

    for (let i = 5; i < 12; i++) {
      second.markPlayed();
      await second.choose(3);
    }
    const session = (await api.session("tok2")) as SessionState;
    expect(session).toMatchObject({ answered: 12, total: 12, done: true });
  });

  it("keeps an untouched session at zero when submission is blocked client-side", async () => {
    const api = new ApiClient(base);
    const machine = new SessionMachine(api, "tok3");
    await machine.start();
    expect(await machine.choose(1)).toEqual({ ok: false, reason: "not-played" });
    expect(await machine.choose(4)).toEqual({ ok: false, reason: "not-played" });
    const session = (await api.session("tok3")) as SessionState;
    expect(session.answered).toBe(0);
  });

  it("unknown tokens get a 404 with a JSON error", async () => {
    const api = new ApiClient(base);
    await expect(api.next("ghost")).rejects.toMatchObject({
      status: 404,
      message: expect.stringContaining("ghost"),
    });
  });
});
