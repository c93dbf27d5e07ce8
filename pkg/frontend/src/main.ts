// Browser wiring: one simulated phone, one active session, event delegation.

import { ApiClient } from "./api.js";
import { SessionController, type UiStep } from "./controller.js";
import { validateIntent, validateMentalState, type MentalStateForm } from "./dialogs.js";
import {
  countdownSeconds,
  renderClosed,
  renderIntentDialog,
  renderLauncher,
  renderMentalStateDialog,
  renderMetrics,
  renderPersuasion,
} from "./render.js";

const APPS = ["picfeed", "clipstream", "mail", "maps"] as const;

const params = new URLSearchParams(location.search);
const baseUrl = params.get("server") ?? "http://127.0.0.1:8000";
const user = params.get("user") ?? "demo";

const client = new ApiClient({ baseUrl, token: params.get("token") ?? undefined });
const controller = new SessionController(client, user);

const root = document.getElementById("app");
if (!root) throw new Error("missing #app element");
const mount: HTMLElement = root;

let streamedText = "";
let streamDone = false;
let countdownTimer: number | undefined;

function draw(step: UiStep = controller.step): void {
  window.clearInterval(countdownTimer);
  if (step.kind === "launcher") {
    mount.innerHTML = renderLauncher(APPS, controller.unlocked);
  } else if (step.kind === "intent") {
    mount.innerHTML = renderIntentDialog(step.app);
  } else if (step.kind === "mental_state") {
    mount.innerHTML = renderMentalStateDialog();
  } else if (step.kind === "persuasion") {
    mount.innerHTML = renderPersuasion({
      round: step.round,
      text: streamedText,
      done: streamDone,
      habit: step.view.habit,
      habitKey: step.view.habit_key,
      countdownSeconds: streamDone ? countdownSeconds(step.view) : null,
    });
    if (streamDone) armCountdown(step);
  } else {
    mount.innerHTML = renderClosed(step.outcome);
  }
}

function armCountdown(step: UiStep & { kind: "persuasion" }): void {
  // re-fetch the server clock once a second; never count down locally
  countdownTimer = window.setInterval(async () => {
    const next = await controller.refresh();
    if (next.kind !== "persuasion") {
      window.clearInterval(countdownTimer);
      draw(next);
      return;
    }
    if (next.round !== step.round) {
      window.clearInterval(countdownTimer);
      await runRound(next);
      return;
    }
    draw(next);
  }, 1000);
}

async function runRound(step: UiStep & { kind: "persuasion" }): Promise<void> {
  streamedText = "";
  streamDone = false;
  draw(step);
  await controller.streamRound({
    onRender: (textSoFar) => {
      streamedText = textSoFar;
      draw(controller.step);
    },
  });
  streamDone = true;
  draw(await controller.refresh());
}

async function handleMentalStateSubmit(form: HTMLFormElement): Promise<void> {
  const data = new FormData(form);
  const parsed: MentalStateForm = {
    engaged: (data.get("engaged") as MentalStateForm["engaged"]) ?? null,
    feeling: (data.get("feeling") as MentalStateForm["feeling"]) ?? null,
    otherText: String(data.get("other_text") ?? ""),
  };
  const check = validateMentalState(parsed);
  if (!check.ok) {
    mount.innerHTML = renderMentalStateDialog(check.error);
    return;
  }
  const step = await controller.submitMentalState(check.engaged, check.feeling, check.otherText);
  if (step.kind === "persuasion") await runRound(step);
  else draw(step);
}

mount.addEventListener("submit", (event) => {
  const form = event.target as HTMLFormElement;
  event.preventDefault();
  if (form.dataset["form"] === "intent") {
    const choice = new FormData(form).get("intent");
    const check = validateIntent(choice === null ? null : String(choice));
    if (!check.ok) {
      const step = controller.step;
      if (step.kind === "intent") mount.innerHTML = renderIntentDialog(step.app, check.error);
      return;
    }
    void controller.submitIntent(check.intent).then((step) => {
      if (step.kind === "closed") draw(step);
      else draw(step);
    });
  } else if (form.dataset["form"] === "mental-state") {
    void handleMentalStateSubmit(form);
  }
});

document.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
  if (!target) return;
  const action = target.dataset["action"];
  const step = controller.step;
  if (action === "unlock") {
    void controller.unlockPhone().then(() => draw());
  } else if (action === "screen-off") {
    void controller.lockPhone().then(() => draw());
  } else if (action === "open-app") {
    const app = target.dataset["app"];
    if (app) void controller.openApp(app, "home").then(draw);
  } else if (action === "exit-app") {
    void controller
      .submitIntent("exit")
      .then(() => controller.closeApp())
      .then(() => draw());
  } else if (action === "quit") {
    void controller
      .decide("quit")
      .then(() => controller.closeApp())
      .then(() => draw());
  } else if (action === "continue") {
    void controller.decide("continue").then(draw);
  } else if (action === "thumb-up" || action === "thumb-down") {
    if (step.kind === "persuasion") {
      void controller.sendFeedback(step.round, action === "thumb-up" ? "up" : "down");
    }
  } else if (action === "edit-habit") {
    const current = step.kind === "persuasion" ? (step.view.habit ?? "") : "";
    const edited = window.prompt("Replace this habit with:", current);
    if (edited && edited.trim()) {
      void controller.editHabit(edited.trim());
    }
  } else if (action === "back-to-launcher") {
    void controller.closeApp().then(() => draw());
  } else if (action === "show-metrics") {
    void client.getReport(user).then((report) => {
      mount.innerHTML = renderMetrics(report);
    });
  }
});

draw();
