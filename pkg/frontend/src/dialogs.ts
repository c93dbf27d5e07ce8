// The two report dialogs. Option sets are fixed: three declared purposes
// plus an exit escape hatch, then two single-choice mental-state questions.

export interface RadioOption {
  value: string;
  label: string;
}

export const INTENT_OPTIONS: readonly RadioOption[] = [
  { value: "habitual", label: "Habitual use" },
  { value: "instrumental", label: "Instrumental use" },
  { value: "relax", label: "Relaxation" },
];

export const EXIT_BUTTON_LABEL = "Exit the app";

export const ENGAGEMENT_QUESTION = {
  name: "engaged",
  prompt: "Are you engaged in activities right now?",
  options: [
    { value: "yes", label: "Yes" },
    { value: "no", label: "No" },
  ] as readonly RadioOption[],
};

export const FEELING_QUESTION = {
  name: "feeling",
  prompt: "Do you currently have any negative feelings?",
  options: [
    { value: "stress", label: "Stress" },
    { value: "boredom", label: "Boredom" },
    { value: "none", label: "None" },
    { value: "other", label: "Other Negative Feelings" },
  ] as readonly RadioOption[],
};

export interface MentalStateForm {
  engaged: "yes" | "no" | null;
  feeling: "stress" | "boredom" | "none" | "other" | null;
  otherText: string;
}

export type FormCheck =
  | { ok: true; engaged: boolean; feeling: string; otherText?: string }
  | { ok: false; error: string };

/** Enforce exactly-one-choice per question; free text only backs "other". */
export function validateMentalState(form: MentalStateForm): FormCheck {
  if (form.engaged === null) {
    return { ok: false, error: "Please answer whether you are engaged in activities." };
  }
  if (form.feeling === null) {
    return { ok: false, error: "Please pick one of the feeling options." };
  }
  if (form.feeling === "other" && form.otherText.trim() === "") {
    return { ok: false, error: "Please describe the feeling in the text box." };
  }
  return {
    ok: true,
    engaged: form.engaged === "yes",
    feeling: form.feeling,
    otherText: form.feeling === "other" ? form.otherText.trim() : undefined,
  };
}

export type IntentCheck = { ok: true; intent: string } | { ok: false; error: string };

export function validateIntent(choice: string | null): IntentCheck {
  if (choice === null) {
    return { ok: false, error: "Please pick one option or exit." };
  }
  const known = [...INTENT_OPTIONS.map((o) => o.value), "exit"];
  if (!known.includes(choice)) {
    return { ok: false, error: `Unknown choice: ${choice}` };
  }
  return { ok: true, intent: choice };
}
