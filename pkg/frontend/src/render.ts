// View rendering as pure HTML-string functions. The browser entry point
// mounts these; tests inspect them without a DOM.

import type { SessionView, UsageReport } from "./api.js";
import {
  ENGAGEMENT_QUESTION,
  EXIT_BUTTON_LABEL,
  FEELING_QUESTION,
  INTENT_OPTIONS,
  type RadioOption,
} from "./dialogs.js";

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function radioGroup(name: string, options: readonly RadioOption[]): string {
  return options
    .map(
      (o) =>
        `<label class="radio-row"><input type="radio" name="${name}" value="${escapeHtml(
          o.value,
        )}"> ${escapeHtml(o.label)}</label>`,
    )
    .join("\n");
}

export function renderLauncher(apps: readonly string[], unlocked: boolean): string {
  const tiles = apps
    .map(
      (app) =>
        `<button class="tile" data-action="open-app" data-app="${escapeHtml(app)}">${escapeHtml(
          app,
        )}</button>`,
    )
    .join("\n");
  const lockButton = unlocked
    ? `<button data-action="screen-off">Lock screen</button>`
    : `<button data-action="unlock">Unlock phone</button>`;
  return `<section class="launcher" data-state="${unlocked ? "unlocked" : "locked"}">
<h2>Phone</h2>
${lockButton}
<div class="tiles"${unlocked ? "" : " hidden"}>
${tiles}
</div>
</section>`;
}

export function renderIntentDialog(app: string, error?: string): string {
  return `<section class="dialog intent-dialog" data-step="intent">
<h2>Why are you opening ${escapeHtml(app)}?</h2>
<form data-form="intent">
${radioGroup("intent", INTENT_OPTIONS)}
${error ? `<p class="error" role="alert">${escapeHtml(error)}</p>` : ""}
<button type="submit">Report</button>
</form>
<button class="exit" data-action="exit-app">${escapeHtml(EXIT_BUTTON_LABEL)}</button>
</section>`;
}

export function renderMentalStateDialog(error?: string): string {
  return `<section class="dialog mental-state-dialog" data-step="mental_state">
<form data-form="mental-state">
<fieldset data-question="${ENGAGEMENT_QUESTION.name}">
<legend>${escapeHtml(ENGAGEMENT_QUESTION.prompt)}</legend>
${radioGroup(ENGAGEMENT_QUESTION.name, ENGAGEMENT_QUESTION.options)}
</fieldset>
<fieldset data-question="${FEELING_QUESTION.name}">
<legend>${escapeHtml(FEELING_QUESTION.prompt)}</legend>
${radioGroup(FEELING_QUESTION.name, FEELING_QUESTION.options)}
<input type="text" name="other_text" placeholder="What is the feeling?" data-for="other">
</fieldset>
${error ? `<p class="error" role="alert">${escapeHtml(error)}</p>` : ""}
<button type="submit">Report</button>
</form>
</section>`;
}

export interface PersuasionViewModel {
  round: number;
  text: string;
  done: boolean;
  habit: string | null;
  habitKey: string | null;
  countdownSeconds: number | null;
}

export function renderPersuasion(model: PersuasionViewModel): string {
  const habitRow =
    model.habit === null
      ? ""
      : `<div class="habit-row" data-habit-key="${escapeHtml(model.habitKey ?? "")}">
<span class="habit-text">${escapeHtml(model.habit)}</span>
<button data-action="edit-habit">Edit</button>
</div>`;
  const countdown =
    model.countdownSeconds === null
      ? ""
      : `<p class="countdown">Next message in ${Math.max(0, Math.ceil(model.countdownSeconds))}s</p>`;
  const controls = model.done
    ? `<div class="controls">
<button data-action="quit">Quit the app</button>
<button data-action="continue">Keep using</button>
<button data-action="thumb-up" aria-label="thumbs up">&#128077;</button>
<button data-action="thumb-down" aria-label="thumbs down">&#128078;</button>
</div>`
    : "";
  return `<section class="dialog persuasion-popup" data-step="persuasion" data-round="${model.round}">
<p class="message">${escapeHtml(model.text)}</p>
${habitRow}
${countdown}
${controls}
</section>`;
}

export function renderClosed(outcome: string | null): string {
  return `<section class="closed" data-step="closed">
<p>Session over${outcome ? `: ${escapeHtml(outcome)}` : ""}.</p>
<button data-action="back-to-launcher">Back</button>
</section>`;
}

function rateCell(value: number | null | undefined): string {
  return value === null || value === undefined ? "&ndash;" : value.toFixed(3);
}

export function renderMetrics(report: UsageReport): string {
  const strategyRows = Object.entries(report.persuasion_acceptance["strategy"] ?? {})
    .map(([k, v]) => `<tr><td>${escapeHtml(k)}</td><td>${rateCell(v)}</td></tr>`)
    .join("\n");
  const roundRows = Object.entries(report.persuasion_acceptance["round"] ?? {})
    .map(([k, v]) => `<tr><td>round ${escapeHtml(k)}</td><td>${rateCell(v)}</td></tr>`)
    .join("\n");
  return `<section class="metrics" data-step="metrics">
<h2>${escapeHtml(report.user)} &mdash; ${escapeHtml(report.period.start)} to ${escapeHtml(
    report.period.end,
  )}</h2>
<table>
<tr><td>overall acceptance</td><td>${rateCell(report.overall_acceptance)}</td></tr>
<tr><td>persuasion acceptance</td><td>${rateCell(
    report.persuasion_acceptance["none"]?.["all"],
  )}</td></tr>
<tr><td>thumb up rate</td><td>${rateCell(report.thumb_rates.up)}</td></tr>
<tr><td>thumb down rate</td><td>${rateCell(report.thumb_rates.down)}</td></tr>
<tr><td>opens per day</td><td>${report.usage.opens_per_day.toFixed(1)}</td></tr>
<tr><td>hours per day</td><td>${report.usage.usage_hours_per_day.toFixed(2)}</td></tr>
<tr><td>habitual proportion</td><td>${rateCell(report.usage.habitual_proportion)}</td></tr>
${strategyRows}
${roundRows}
</table>
</section>`;
}

/** Countdown straight from server-reported clocks, never the browser's. */
export function countdownSeconds(view: SessionView): number | null {
  if (view.next_round_at === null) return null;
  const remaining = (Date.parse(view.next_round_at) - Date.parse(view.now)) / 1000;
  return remaining > 0 ? remaining : 0;
}
