// Full round trip against a real server process: launcher, intent dialog,
// mental state, two streamed persuasion rounds, quit. Afterwards the event
// log on disk must contain exactly the expected sequence.

import { type ChildProcess, spawn } from "node:child_process";
import { mkdtemp, readFile, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, type ProfileBody } from "../src/api.js";
import { SessionController } from "../src/controller.js";
import { countdownSeconds } from "../src/render.js";

const PORT = 21000 + (process.pid % 2000);
const BASE = `http://127.0.0.1:${PORT}`;
const USER = "ui-user";
const CADENCE_S = 1.5;

const PROFILE: ProfileBody = {
  values: [
    { category: "career", goal: "ship the portfolio", action: "sketch one page" },
    { category: "health", goal: "sleep by midnight", action: "stretch for five minutes" },
  ],
  blacklist: ["picfeed", "clipstream"],
};

let server: ChildProcess;
let dataDir: string;
let stderrBuf = "";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitForHealthz(): Promise<void> {
  const deadline = Date.now() + 15_000;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/healthz`);
      if (r.ok) return;
    } catch {
      // not listening yet
    }
    await sleep(100);
  }
  throw new Error(`server never came up on ${BASE}\n${stderrBuf}`);
}

interface LoggedEvent {
  kind: string;
  user: string;
  [key: string]: unknown;
}

async function readEventLog(expectedLines: number): Promise<LoggedEvent[]> {
  const path = join(dataDir, "events.jsonl");
  const deadline = Date.now() + 3_000;
  let lines: string[] = [];
  while (Date.now() < deadline) {
    try {
      const text = await readFile(path, "utf-8");
      lines = text.split("\n").filter((l) => l.trim() !== "");
      if (lines.length >= expectedLines) break;
    } catch {
      // sink file not created yet
    }
    await sleep(100);
  }
  return lines.map((l) => JSON.parse(l) as LoggedEvent);
}

beforeAll(async () => {
  const root = await mkdtemp(join(tmpdir(), "ui-flow-"));
  dataDir = join(root, "data");
  const configPath = join(root, "server.json");
  await writeFile(
    configPath,
    JSON.stringify({
      port: PORT,
      data_dir: dataDir,
      mode: "full",
      round_cadence_s: CADENCE_S,
    }),
  );
  server = spawn("python3", ["-m", "nudgeloop.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "ignore", "pipe"],
  });
  server.stderr?.on("data", (d: Buffer) => {
    stderrBuf += d.toString();
  });
  await waitForHealthz();
});

afterAll(async () => {
  if (!server) return;
  server.kill("SIGTERM");
  const gone = new Promise<void>((resolve) => server.once("exit", () => resolve()));
  await Promise.race([gone, sleep(3_000).then(() => server.kill("SIGKILL"))]);
});

describe("scripted phone session", () => {
  it("walks launcher, intent, mental state, two rounds, quit", async () => {
    const client = new ApiClient({ baseUrl: BASE });
    await client.createProfile(USER, PROFILE);

    const phone = new SessionController(client, USER);
    await phone.unlockPhone();
    expect(phone.unlocked).toBe(true);

    // opening a watched app raises the intent dialog
    const intentStep = await phone.openApp("picfeed", "home");
    expect(intentStep.kind).toBe("intent");
    if (intentStep.kind !== "intent") return;
    expect(intentStep.app).toBe("picfeed");
    const sessionId = intentStep.sessionId;

    const msStep = await phone.submitIntent("habitual");
    expect(msStep.kind).toBe("mental_state");

    const roundOne = await phone.submitMentalState(true, "boredom");
    expect(roundOne.kind).toBe("persuasion");
    if (roundOne.kind !== "persuasion") return;
    expect(roundOne.round).toBe(1);

    // countdown comes from server-sent timestamps, never the local clock
    const remaining = countdownSeconds(roundOne.view);
    expect(remaining).not.toBeNull();
    expect(remaining as number).toBeGreaterThanOrEqual(0);
    expect(remaining as number).toBeLessThanOrEqual(CADENCE_S);

    // round 1 streams progressively; the final render is the whole message
    const renders1: string[] = [];
    const finished1 = await phone.streamRound({ onRender: (t) => renders1.push(t) });
    expect(finished1.round).toBe(1);
    expect(finished1.source).toBe("fallback");
    expect(finished1.text.length).toBeGreaterThan(0);
    for (let i = 1; i < renders1.length; i++) {
      expect(renders1[i]?.startsWith(renders1[i - 1] ?? "")).toBe(true);
    }
    expect(renders1[renders1.length - 1]).toBe(finished1.text);

    // the cadence tick advances to round 2 on the server side
    const roundTwo = await phone.waitForRoundChange(1);
    expect(roundTwo.kind).toBe("persuasion");
    if (roundTwo.kind !== "persuasion") return;
    expect(roundTwo.round).toBe(2);

    // a reloaded page rebuilds the same step purely from the server
    const reloaded = new SessionController(new ApiClient({ baseUrl: BASE }), USER);
    const resumed = await reloaded.refresh(sessionId);
    expect(resumed.kind).toBe("persuasion");
    if (resumed.kind !== "persuasion") return;
    expect(resumed.round).toBe(2);
    expect(resumed.view.rounds["1"]?.done).toBe(true);
    expect(resumed.view.rounds["1"]?.text).toBe(finished1.text);

    const renders2: string[] = [];
    const finished2 = await reloaded.streamRound({ onRender: (t) => renders2.push(t) });
    expect(finished2.round).toBe(2);
    expect(renders2[renders2.length - 1]).toBe(finished2.text);
    expect(finished2.text).not.toBe(finished1.text);

    const closed = await reloaded.decide("quit");
    expect(closed.kind).toBe("closed");
    if (closed.kind !== "closed") return;
    expect(closed.outcome).toBe("quit_at_round");

    await reloaded.closeApp();

    // the durable log must hold exactly this sequence, in order
    const events = await readEventLog(9);
    expect(events.map((e) => e.kind)).toEqual([
      "screen_unlock",
      "app_open",
      "intent_report",
      "mental_state_report",
      "persuasion_shown",
      "decision",
      "persuasion_shown",
      "decision",
      "app_close",
    ]);
    expect(events.every((e) => e.user === USER)).toBe(true);

    const appOpen = events[1];
    expect(appOpen?.app).toBe("picfeed");
    expect(appOpen?.location).toBe("home");
    expect(events[2]?.intent).toBe("habitual");
    expect(events[3]?.engaged).toBe(true);
    expect(events[3]?.state).toBe("boredom");

    const shown = events.filter((e) => e.kind === "persuasion_shown");
    expect(shown.map((e) => e.round)).toEqual([1, 2]);

    // deciding nothing at the tick counts as continuing round 1
    const decisions = events.filter((e) => e.kind === "decision");
    expect(decisions.map((e) => [e.round, e.decision])).toEqual([
      [1, "continue"],
      [2, "quit"],
    ]);

    // the one habitual session, quit under persuasion, ends up in the report
    const report = await client.getReport(USER);
    expect(report.overall_acceptance).toBe(1.0);
    expect(report.usage.total_opens).toBe(1);
  });
});
