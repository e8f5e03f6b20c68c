// DOM wiring: one active item at a time, native audio element, four fixed
// option buttons, keyboard shortcuts 1-4.

import { ApiClient, NextItem } from "./api.js";
import { MachineState, Option, SessionMachine } from "./session.js";

const api = new ApiClient("");

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const tokenForm = el<HTMLFormElement>("token-form");
const tokenInput = el<HTMLInputElement>("token-input");
const testPanel = el<HTMLDivElement>("test-panel");
const donePanel = el<HTMLDivElement>("done-panel");
const progressLabel = el<HTMLSpanElement>("progress");
const player = el<HTMLAudioElement>("player");
const optionsBox = el<HTMLDivElement>("options");
const hint = el<HTMLParagraphElement>("hint");
const banner = el<HTMLDivElement>("banner");
const retryButton = el<HTMLButtonElement>("retry");

let machine: SessionMachine | null = null;
let currentItemId: string | null = null;

function render(state: MachineState): void {
  banner.hidden = state.error === null;
  banner.textContent = state.error ? `Problem: ${state.error}` : "";
  retryButton.hidden = state.phase !== "failed";

  tokenForm.hidden = state.phase !== "idle";
  testPanel.hidden = state.phase !== "item" && state.phase !== "submitting";
  donePanel.hidden = state.phase !== "done";

  progressLabel.textContent = `${state.progress.answered} / ${state.progress.total}`;

  if (state.item && state.item.item_id !== currentItemId) {
    currentItemId = state.item.item_id;
    loadItem(state.item);
  }
  const buttons = optionsBox.querySelectorAll("button");
  buttons.forEach((b) => {
    b.disabled = !state.played || state.phase !== "item";
  });
  hint.hidden = state.played;
}

function loadItem(item: NextItem): void {
  player.src = api.audioUrl(item);
  optionsBox.replaceChildren();
  item.options.forEach((label, i) => {
    const button = document.createElement("button");
    button.textContent = `${i + 1}. ${label}`;
    button.disabled = true;
    button.addEventListener("click", () => void submit((i + 1) as Option));
    optionsBox.appendChild(button);
  });
}

async function submit(option: Option): Promise<void> {
  if (!machine) return;
  const outcome = await machine.choose(option);
  if (!outcome.ok && outcome.reason === "not-played") {
    hint.hidden = false;
    hint.textContent = "Please listen to the clip before answering.";
  }
}

function startSession(token: string): void {
  machine = new SessionMachine(api, token);
  machine.subscribe(render);
  void machine.start();
}

tokenForm.addEventListener("submit", (ev) => {
  ev.preventDefault();
  const token = tokenInput.value.trim();
  if (token) startSession(token);
});

retryButton.addEventListener("click", () => {
  if (machine) void machine.start();
});

// a full listen unlocks the options; replays are always allowed
player.addEventListener("ended", () => {
  if (machine) machine.markPlayed();
});

document.addEventListener("keydown", (ev) => {
  if (ev.key >= "1" && ev.key <= "4") {
    void submit(Number(ev.key) as Option);
  }
});

const params = new URLSearchParams(window.location.search);
const urlToken = params.get("token");
if (urlToken) {
  tokenInput.value = urlToken;
  startSession(urlToken);
}
