// Session state machine, kept free of DOM so it can be driven from tests.
//
// Rules it enforces:
//   * an item can only be answered after its clip has been played once,
//   * at most one submission is in flight (double-clicks collapse to one POST),
//   * progress always mirrors the server cursor, so a reload resumes cleanly,
//   * a network failure keeps the same item current for a retry.

import { ApiClient, ApiError, NextItem, Progress } from "./api.js";

export type Phase = "idle" | "loading" | "item" | "submitting" | "done" | "failed";

export interface MachineState {
  phase: Phase;
  item: NextItem | null;
  played: boolean;
  progress: Progress;
  error: string | null;
}

export type Option = 1 | 2 | 3 | 4;

export type ChooseOutcome =
  | { ok: true; done: boolean }
  | { ok: false; reason: "not-played" | "busy" | "no-item" | "network" | "rejected"; message?: string };

export class SessionMachine {
  private state: MachineState = {
    phase: "idle",
    item: null,
    played: false,
    progress: { answered: 0, total: 0 },
    error: null,
  };
  private watchers: Array<(s: MachineState) => void> = [];

  constructor(private api: ApiClient, readonly token: string) {}

  getState(): MachineState {
    return { ...this.state, progress: { ...this.state.progress } };
  }

  subscribe(fn: (s: MachineState) => void): void {
    this.watchers.push(fn);
  }

  /** Fetch the next unanswered item from the server cursor (also resumes). */
  async start(): Promise<void> {
    this.update({ phase: "loading", error: null });
    try {
      const next = await this.api.next(this.token);
      if (next.done) {
        this.update({ phase: "done", item: null, played: false, progress: next.progress });
      } else {
        this.update({ phase: "item", item: next, played: false, progress: next.progress });
      }
    } catch (err) {
      this.update({ phase: "failed", error: describe(err) });
    }
  }

  /** Call when the clip for the current item has finished playing. */
  markPlayed(): void {
    if (this.state.phase === "item" && !this.state.played) {
      this.update({ played: true });
    }
  }

  async choose(option: Option): Promise<ChooseOutcome> {
    if (this.state.phase === "submitting") return { ok: false, reason: "busy" };
    if (this.state.phase !== "item" || this.state.item === null) {
      return { ok: false, reason: "no-item" };
    }
    if (!this.state.played) return { ok: false, reason: "not-played" };

    const item = this.state.item;
    this.update({ phase: "submitting" });
    try {
      const result = await this.api.submit(this.token, item.item_id, option);
      this.update({ progress: { answered: result.answered, total: result.total } });
    } catch (err) {
      if (err instanceof ApiError) {
        // the server refused the submission; surface it and refetch the cursor
        this.update({ phase: "failed", error: err.message });
        return { ok: false, reason: "rejected", message: err.message };
      }
      // network trouble: same item stays current, played flag survives
      this.update({ phase: "item", error: describe(err) });
      return { ok: false, reason: "network", message: describe(err) };
    }
    await this.start();
    return { ok: true, done: this.getState().phase === "done" };
  }

  private update(patch: Partial<MachineState>): void {
    this.state = { ...this.state, ...patch };
    const snapshot = this.getState();
    for (const fn of this.watchers) fn(snapshot);
  }
}

function describe(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}
