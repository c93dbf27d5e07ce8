// Session flow driven entirely by server responses. The browser page and
// the tests share this controller; only the DOM wiring lives elsewhere.

import { ApiClient, type SessionView } from "./api.js";
import { consumePersuasionStream, type FinishedRound, type StreamCallbacks } from "./sse.js";

export type UiStep =
  | { kind: "launcher" }
  | { kind: "intent"; sessionId: string; app: string }
  | { kind: "mental_state"; sessionId: string }
  | { kind: "persuasion"; sessionId: string; round: number; view: SessionView }
  | { kind: "closed"; sessionId: string; outcome: string | null };

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class SessionController {
  step: UiStep = { kind: "launcher" };
  unlocked = false;
  private currentApp: string | null = null;

  constructor(
    readonly client: ApiClient,
    readonly user: string,
  ) {}

  private sessionId(): string {
    const step = this.step;
    if (step.kind === "launcher") throw new Error("no active session");
    return step.sessionId;
  }

  async unlockPhone(): Promise<void> {
    await this.client.postEvents([{ kind: "screen_unlock", user: this.user }]);
    this.unlocked = true;
  }

  async lockPhone(): Promise<void> {
    await this.client.postEvents([{ kind: "screen_off", user: this.user }]);
    this.unlocked = false;
    this.step = { kind: "launcher" };
    this.currentApp = null;
  }

  /** Open a launcher tile; a watched app comes back with the intent dialog. */
  async openApp(app: string, location?: string): Promise<UiStep> {
    const { results } = await this.client.postEvents([
      { kind: "app_open", user: this.user, app, location },
    ]);
    this.currentApp = app;
    const first = results[0];
    if (first && first.action === "show_intent_dialog" && first.session_id) {
      this.step = { kind: "intent", sessionId: first.session_id, app };
    } else {
      this.step = { kind: "launcher" };
    }
    return this.step;
  }

  /** Close the simulated app window; the server hears an app_close. */
  async closeApp(): Promise<void> {
    if (this.currentApp !== null) {
      await this.client.postEvents([{ kind: "app_close", user: this.user, app: this.currentApp }]);
      this.currentApp = null;
    }
    this.step = { kind: "launcher" };
  }

  async submitIntent(intent: string): Promise<UiStep> {
    const sessionId = this.sessionId();
    const result = await this.client.submitIntent(sessionId, intent);
    if (result.next_step === "mental_state") {
      this.step = { kind: "mental_state", sessionId };
    } else {
      this.step = { kind: "closed", sessionId, outcome: result.outcome };
    }
    return this.step;
  }

  async submitMentalState(engaged: boolean, feeling: string, otherText?: string): Promise<UiStep> {
    const sessionId = this.sessionId();
    await this.client.submitMentalState(sessionId, engaged, feeling, otherText);
    await this.refresh();
    return this.step;
  }

  /** Re-derive the current step from the server; also the reload path. */
  async refresh(sessionId?: string): Promise<UiStep> {
    const id = sessionId ?? this.sessionId();
    const view = await this.client.getSession(id);
    if (view.state === "await_intent") {
      this.step = { kind: "intent", sessionId: id, app: view.app };
    } else if (view.state === "await_mental_state") {
      this.step = { kind: "mental_state", sessionId: id };
    } else if (view.state === "persuading") {
      this.step = { kind: "persuasion", sessionId: id, round: view.round, view };
    } else {
      this.step = { kind: "closed", sessionId: id, outcome: view.outcome };
    }
    if (view.state !== "closed") this.currentApp = view.app;
    return this.step;
  }

  /** Stream the current round's message, rendering progressively. */
  async streamRound(callbacks: StreamCallbacks): Promise<FinishedRound> {
    const step = this.step;
    if (step.kind !== "persuasion") throw new Error(`not persuading: ${step.kind}`);
    return consumePersuasionStream(this.client, step.sessionId, step.round, callbacks);
  }

  /**
   * Wait for the server's cadence tick to advance the round, or for the
   * session to close. Polling, since round changes originate server-side.
   */
  async waitForRoundChange(fromRound: number, timeoutMs = 15000): Promise<UiStep> {
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
      const step = await this.refresh();
      if (step.kind === "closed") return step;
      if (step.kind === "persuasion" && step.round !== fromRound) return step;
      await sleep(100);
    }
    throw new Error(`round never moved past ${fromRound} within ${timeoutMs}ms`);
  }

  async decide(decision: "quit" | "continue"): Promise<UiStep> {
    const sessionId = this.sessionId();
    const { outcome } = await this.client.submitDecision(sessionId, decision);
    if (decision === "quit") {
      this.step = { kind: "closed", sessionId, outcome };
    } else {
      await this.refresh();
    }
    return this.step;
  }

  async sendFeedback(round: number, feedback: "up" | "down"): Promise<void> {
    await this.client.submitFeedback(this.sessionId(), round, feedback);
  }

  async editHabit(newHabit: string): Promise<string> {
    const step = this.step;
    if (step.kind !== "persuasion" || step.view.habit_key === null) {
      throw new Error("no editable habit on screen");
    }
    const result = await this.client.editHabit(step.view.habit_key, this.user, newHabit);
    await this.refresh();
    return result.habit;
  }
}
