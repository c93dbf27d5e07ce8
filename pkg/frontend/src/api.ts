// Typed client for the intervention server. Every call here maps to one
// HTTP endpoint; nothing in the UI talks to the backend any other way.

export interface GoalValue {
  category: "career" | "health" | "life" | "hobbies";
  goal: string;
  action: string;
}

export interface ProfileBody {
  values: GoalValue[];
  blacklist: string[];
  timezone?: string;
}

export type DeviceEvent =
  | { kind: "screen_unlock"; user: string; ts?: string }
  | { kind: "screen_off"; user: string; ts?: string }
  | { kind: "app_open"; user: string; app: string; location?: string; ts?: string }
  | { kind: "app_close"; user: string; app: string; ts?: string }
  | { kind: "heartbeat"; user: string; service_ok?: boolean; ts?: string };

export interface EventResult {
  ok: boolean;
  action?: "show_intent_dialog" | "no_action";
  session_id?: string | null;
}

export interface IntentResponse {
  next_step: "mental_state" | "closed";
  outcome: string | null;
}

export interface RoundInfo {
  session_id: string;
  round: number;
  strategy: string | null;
  habit: string | null;
}

export interface SessionView {
  session_id: string;
  user: string;
  app: string;
  state: "await_intent" | "await_mental_state" | "persuading" | "closed";
  intent: string | null;
  round: number;
  strategy: string | null;
  habit: string | null;
  habit_key: string | null;
  shown_at: string | null;
  next_round_at: string | null;
  now: string;
  outcome: string | null;
  timed_out: boolean;
  rounds: Record<string, { done: boolean; text: string | null; source: string | null }>;
}

export interface UsageReport {
  user: string;
  period: { start: string; end: string; days: number };
  overall_acceptance: number | null;
  persuasion_acceptance: Record<string, Record<string, number>>;
  thumb_rates: { up: number | null; down: number | null };
  usage: {
    days: number;
    total_opens: number;
    opens_per_day: number;
    usage_hours_per_day: number;
    opens_by_intent: Record<string, number>;
    habitual_proportion: number | null;
  };
}

export interface ApiClientOptions {
  baseUrl: string;
  token?: string;
  fetchImpl?: typeof fetch;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  readonly baseUrl: string;
  private readonly token?: string;
  private readonly fetchImpl: typeof fetch;

  constructor(options: ApiClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/$/, "");
    this.token = options.token;
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  headers(): Record<string, string> {
    const h: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const r = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!r.ok) {
      let detail = r.statusText;
      try {
        const parsed = (await r.json()) as { detail?: string };
        if (parsed.detail) detail = parsed.detail;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(r.status, detail);
    }
    return (await r.json()) as T;
  }

  createProfile(user: string, body: ProfileBody): Promise<{ user: string }> {
    return this.request("POST", `/users/${encodeURIComponent(user)}/profile`, body);
  }

  postEvents(events: DeviceEvent[]): Promise<{ results: EventResult[] }> {
    return this.request("POST", "/events", events);
  }

  submitIntent(sessionId: string, intent: string): Promise<IntentResponse> {
    return this.request("POST", `/sessions/${sessionId}/intent`, { intent });
  }

  submitMentalState(
    sessionId: string,
    engaged: boolean,
    feeling: string,
    otherText?: string,
  ): Promise<RoundInfo> {
    return this.request("POST", `/sessions/${sessionId}/mental-state`, {
      engaged,
      feeling,
      other_text: otherText,
    });
  }

  submitDecision(sessionId: string, decision: "quit" | "continue"): Promise<{ outcome: string | null }> {
    return this.request("POST", `/sessions/${sessionId}/decision`, { decision });
  }

  submitFeedback(sessionId: string, round: number, feedback: "up" | "down"): Promise<{ ok: boolean }> {
    return this.request("POST", `/sessions/${sessionId}/feedback`, { round, feedback });
  }

  editHabit(key: string, user: string, habit: string): Promise<{ key: string; habit: string }> {
    return this.request("PUT", `/habits/${encodeURIComponent(key)}`, { user, habit });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  getReport(user: string, period?: string): Promise<UsageReport> {
    const suffix = period ? `?period=${encodeURIComponent(period)}` : "";
    return this.request("GET", `/reports/${encodeURIComponent(user)}${suffix}`);
  }

  persuasionUrl(sessionId: string, round?: number): string {
    const suffix = round === undefined ? "" : `?round=${round}`;
    return `${this.baseUrl}/sessions/${sessionId}/persuasion${suffix}`;
  }

  fetchRaw(url: string): Promise<Response> {
    return this.fetchImpl(url, { headers: this.headers() });
  }
}
