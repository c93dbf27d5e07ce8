// The frame parser and the retry-then-fallback policy, exercised against
// synthetic Response streams so no server is involved.

import { describe, expect, it } from "vitest";

import type { ApiClient } from "../src/api.js";
import { consumePersuasionStream, readSseFrames, type SseFrame } from "../src/sse.js";

const encoder = new TextEncoder();

const chunkFrame = (text: string) => `event: chunk\ndata: ${JSON.stringify({ text })}\n\n`;
const resetFrame = () => `event: reset\ndata: {}\n\n`;
const doneFrame = (text: string, round = 1) =>
  `event: done\ndata: ${JSON.stringify({ text, strategy: "understanding", source: "fallback", round })}\n\n`;

/** One Response whose body enqueues `parts` one read at a time. */
function sseResponse(parts: string[], failAfter = -1): Response {
  let idx = 0;
  const stream = new ReadableStream<Uint8Array>({
    pull(controller) {
      if (idx === failAfter) {
        controller.error(new Error("connection reset"));
        return;
      }
      if (idx >= parts.length) {
        controller.close();
        return;
      }
      controller.enqueue(encoder.encode(parts[idx] ?? ""));
      idx += 1;
    },
  });
  return new Response(stream, {
    status: 200,
    headers: { "content-type": "text/event-stream" },
  });
}

interface MockSessionEntry {
  text: string | null;
  done: boolean;
  source?: string | null;
}

function mockClient(
  makeResponses: Array<() => Response>,
  view?: { round: number; strategy: string | null; rounds: Record<string, MockSessionEntry> },
): { client: ApiClient; calls: () => number } {
  let i = 0;
  const client = {
    persuasionUrl: (sessionId: string, round?: number) =>
      `http://test/sessions/${sessionId}/persuasion${round ? `?round=${round}` : ""}`,
    fetchRaw: async () => {
      const make = makeResponses[i];
      i += 1;
      if (!make) throw new Error("no more responses scripted");
      return make();
    },
    getSession: async () => {
      if (!view) throw new Error("no session view scripted");
      return view;
    },
  } as unknown as ApiClient;
  return { client, calls: () => i };
}

describe("readSseFrames", () => {
  it("parses frames in order with JSON payloads", async () => {
    const body = chunkFrame("Hello ") + chunkFrame("there.") + doneFrame("Hello there.");
    const frames: SseFrame[] = [];
    await readSseFrames(sseResponse([body]), (f) => frames.push(f));
    expect(frames.map((f) => f.event)).toEqual(["chunk", "chunk", "done"]);
    expect(frames[0]?.data).toEqual({ text: "Hello " });
    expect((frames[2]?.data as { source: string }).source).toBe("fallback");
  });

  it("handles frames split across arbitrary read boundaries", async () => {
    const body = chunkFrame("alpha ") + chunkFrame("beta ") + doneFrame("alpha beta ");
    // slice mid-line so every buffer ends in a partial frame
    const parts = [body.slice(0, 9), body.slice(9, 31), body.slice(31, 32), body.slice(32)];
    const frames: SseFrame[] = [];
    await readSseFrames(sseResponse(parts), (f) => frames.push(f));
    expect(frames.map((f) => f.event)).toEqual(["chunk", "chunk", "done"]);
    expect(frames[1]?.data).toEqual({ text: "beta " });
  });

  it("rejects a non-200 response", async () => {
    const response = new Response("not found", { status: 404 });
    await expect(readSseFrames(response, () => {})).rejects.toThrow(/HTTP 404/);
  });
});

describe("consumePersuasionStream", () => {
  it("renders progressively and the final render equals the done text", async () => {
    const words = ["Take ", "a ", "slow ", "breath."];
    const full = words.join("");
    const body = words.map(chunkFrame).join("") + doneFrame(full);
    const { client } = mockClient([() => sseResponse([body])]);
    const renders: string[] = [];
    const finished = await consumePersuasionStream(client, "s1", 1, {
      onRender: (t) => renders.push(t),
    });
    expect(renders).toEqual(["Take ", "Take a ", "Take a slow ", "Take a slow breath."]);
    expect(renders[renders.length - 1]).toBe(finished.text);
    expect(finished.source).toBe("fallback");
    expect(finished.round).toBe(1);
  });

  it("starts over when the server sends a reset frame", async () => {
    const body =
      chunkFrame("draft one") + resetFrame() + chunkFrame("final ") + chunkFrame("text.") + doneFrame("final text.");
    const { client } = mockClient([() => sseResponse([body])]);
    const renders: string[] = [];
    const finished = await consumePersuasionStream(client, "s1", 1, {
      onRender: (t) => renders.push(t),
    });
    expect(renders).toEqual(["draft one", "", "final ", "final text."]);
    expect(finished.text).toBe("final text.");
  });

  it("retries once after a dropped stream", async () => {
    const good = chunkFrame("second try.") + doneFrame("second try.");
    const { client, calls } = mockClient([
      () => sseResponse([chunkFrame("first tr")], 1),
      () => sseResponse([good]),
    ]);
    const renders: string[] = [];
    const finished = await consumePersuasionStream(client, "s1", 1, {
      onRender: (t) => renders.push(t),
    });
    expect(calls()).toBe(2);
    expect(finished.text).toBe("second try.");
    expect(renders[renders.length - 1]).toBe("second try.");
  });

  it("falls back to the completed session text when both attempts die", async () => {
    const { client, calls } = mockClient(
      [() => sseResponse([], 0), () => sseResponse([chunkFrame("par")], 1)],
      {
        round: 2,
        strategy: "comforting",
        rounds: { "2": { text: "The whole message.", done: true, source: "fallback" } },
      },
    );
    const renders: string[] = [];
    const finished = await consumePersuasionStream(client, "s1", 2, {
      onRender: (t) => renders.push(t),
    });
    expect(calls()).toBe(2);
    expect(renders).toContain("The whole message.");
    expect(finished).toEqual({
      text: "The whole message.",
      strategy: "comforting",
      source: "fallback",
      round: 2,
    });
  });

  it("rethrows when even the fallback fetch has nothing finished", async () => {
    const { client } = mockClient(
      [() => sseResponse([], 0), () => sseResponse([], 0)],
      { round: 1, strategy: null, rounds: { "1": { text: null, done: false } } },
    );
    await expect(
      consumePersuasionStream(client, "s1", 1, { onRender: () => {} }),
    ).rejects.toThrow(/connection reset/);
  });

  it("treats a stream that ends without a done frame as a drop", async () => {
    const { client, calls } = mockClient([
      () => sseResponse([chunkFrame("half a mess")]),
      () => sseResponse([chunkFrame("ok.") + doneFrame("ok.")]),
    ]);
    const finished = await consumePersuasionStream(client, "s1", 1, { onRender: () => {} });
    expect(calls()).toBe(2);
    expect(finished.text).toBe("ok.");
  });
});
