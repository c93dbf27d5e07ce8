// Server-sent-events consumption for the persuasion stream. Plain fetch
// plus a frame parser, so the same code runs in the browser and in node.

import type { ApiClient } from "./api.js";

export interface SseFrame {
  event: string;
  data: unknown;
}

/** Split an SSE byte stream into (event, parsed-data) frames. */
export async function readSseFrames(
  response: Response,
  onFrame: (frame: SseFrame) => void,
): Promise<void> {
  if (!response.ok) throw new Error(`stream failed: HTTP ${response.status}`);
  if (!response.body) throw new Error("stream has no body");
  const reader = response.body.getReader();
  const decoder = new TextDecoder("utf-8");
  let buffer = "";
  while (true) {
    const { value, done } = await reader.read();
    if (done) break;
    buffer += decoder.decode(value, { stream: true });
    const frames = buffer.split(/\r?\n\r?\n/);
    buffer = frames.pop() ?? "";
    for (const frame of frames) {
      let event = "message";
      const dataLines: string[] = [];
      for (const line of frame.split(/\r?\n/)) {
        if (line.startsWith("event: ")) {
          event = line.slice(7).trim();
        } else if (line.startsWith("data: ")) {
          dataLines.push(line.slice(6));
        }
      }
      if (dataLines.length === 0) continue;
      const raw = dataLines.join("\n");
      let data: unknown;
      try {
        data = JSON.parse(raw);
      } catch {
        data = raw;
      }
      onFrame({ event, data });
    }
  }
}

export interface FinishedRound {
  text: string;
  strategy: string | null;
  source: string;
  round: number;
}

export interface StreamCallbacks {
  /** Called with the full text so far after every chunk. */
  onRender: (textSoFar: string) => void;
}

async function consumeOnce(
  client: ApiClient,
  sessionId: string,
  round: number | undefined,
  callbacks: StreamCallbacks,
): Promise<FinishedRound> {
  const response = await client.fetchRaw(client.persuasionUrl(sessionId, round));
  let text = "";
  let finished: FinishedRound | null = null;
  await readSseFrames(response, ({ event, data }) => {
    if (event === "chunk") {
      text += (data as { text: string }).text;
      callbacks.onRender(text);
    } else if (event === "reset") {
      // the server restarted generation on another backend
      text = "";
      callbacks.onRender(text);
    } else if (event === "done") {
      const d = data as FinishedRound;
      finished = { text: d.text, strategy: d.strategy, source: d.source, round: d.round };
    }
  });
  if (finished === null) throw new Error("stream ended without a done frame");
  return finished;
}

/**
 * Stream one persuasion round, rendering progressively. A dropped stream
 * is retried once; if the retry also dies, the completed text is fetched
 * from the session view so the pop-up still shows the whole message.
 */
export async function consumePersuasionStream(
  client: ApiClient,
  sessionId: string,
  round: number | undefined,
  callbacks: StreamCallbacks,
): Promise<FinishedRound> {
  let lastError: unknown;
  for (let attempt = 0; attempt < 2; attempt++) {
    try {
      return await consumeOnce(client, sessionId, round, callbacks);
    } catch (err) {
      lastError = err;
    }
  }
  const view = await client.getSession(sessionId);
  const roundNo = round ?? view.round;
  const entry = view.rounds[String(roundNo)];
  if (entry && entry.done && entry.text !== null) {
    callbacks.onRender(entry.text);
    return {
      text: entry.text,
      strategy: view.strategy,
      source: entry.source ?? "unknown",
      round: roundNo,
    };
  }
  throw lastError instanceof Error ? lastError : new Error(String(lastError));
}
