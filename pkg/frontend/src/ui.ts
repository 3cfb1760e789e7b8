/*
 * DOM rendering for the annotation task page. No framework: each
 * screen is a function that rebuilds its container from data, and all
 * interaction is reported upward through small handler interfaces.
 */

import type { HitItem, LabelsResponse, QuizFeedback } from "./api.js";
import type { HitSession, LabelChoice } from "./state.js";

export interface ChoiceHandlers {
  onChoice(choice: LabelChoice): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderProgress(target: HTMLElement, session: HitSession): void {
  target.textContent = "";
  const position = el(target.ownerDocument, "span", "progress", session.progressText());
  const quiz = el(
    target.ownerDocument,
    "span",
    "quiz-score",
    `quiz ${session.quizScoreText()}`
  );
  target.append(position, quiz);
}

function renderTurns(doc: Document, item: HitItem): HTMLElement {
  const list = el(doc, "div", "turns");
  item.texts.forEach((text, i) => {
    const turn = el(doc, "p", i === item.turn_index ? "turn target" : "turn", text);
    list.appendChild(turn);
  });
  return list;
}

function suggestionButton(
  doc: Document,
  label: string,
  confidence: number,
  index: number,
  handlers: ChoiceHandlers
): HTMLButtonElement {
  const button = el(doc, "button", "suggestion");
  button.dataset.label = label;
  button.append(
    el(doc, "span", "key-hint", String(index + 1)),
    el(doc, "span", "suggestion-label", label)
  );
  const bar = el(doc, "span", "conf-bar");
  bar.style.width = `${Math.round(confidence * 1000) / 10}%`;
  bar.title = confidence.toFixed(3);
  button.appendChild(bar);
  button.addEventListener("click", () =>
    handlers.onChoice({ kind: "top3", label })
  );
  return button;
}

function fullPicker(
  doc: Document,
  labels: LabelsResponse,
  handlers: ChoiceHandlers
): HTMLElement {
  const wrap = el(doc, "div", "other-label");
  wrap.appendChild(el(doc, "p", "control-caption", "None of these? Pick any label:"));
  const select = el(doc, "select", "label-select");
  select.appendChild(el(doc, "option", undefined, "choose a label"));
  (select.firstChild as HTMLOptionElement).value = "";
  for (const [group, names] of [
    ["Emotions", labels.emotions],
    ["Intents", labels.intents],
  ] as const) {
    const optgroup = doc.createElement("optgroup");
    optgroup.label = group;
    for (const name of names) {
      const option = el(doc, "option", undefined, name);
      option.value = name;
      optgroup.appendChild(option);
    }
    select.appendChild(optgroup);
  }
  const use = el(doc, "button", "use-label", "Use label");
  use.addEventListener("click", () => {
    if (select.value) {
      handlers.onChoice({ kind: "taxonomy", label: select.value });
    }
  });
  wrap.append(select, use);
  return wrap;
}

function customEntry(doc: Document, handlers: ChoiceHandlers): HTMLElement {
  const wrap = el(doc, "div", "new-label");
  wrap.appendChild(
    el(doc, "p", "control-caption", "Still no match? Name the category yourself:")
  );
  const input = el(doc, "input", "custom-input");
  input.type = "text";
  input.placeholder = "new label";
  const add = el(doc, "button", "add-label", "Submit new label");
  add.addEventListener("click", () => {
    if (input.value.trim()) {
      handlers.onChoice({ kind: "custom", text: input.value });
    }
  });
  wrap.append(input, add);
  return wrap;
}

export function renderItem(
  container: HTMLElement,
  item: HitItem,
  labels: LabelsResponse,
  handlers: ChoiceHandlers
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const card = el(doc, "div", `item ${item.kind}`);
  card.dataset.itemId = item.item_id;

  if (item.kind === "quiz") {
    card.appendChild(el(doc, "p", "quiz-badge", "Quality check"));
    card.appendChild(
      el(
        doc,
        "p",
        "prompt",
        "How does the speaker of this situation feel, or what is the listener doing?"
      )
    );
  } else {
    card.appendChild(
      el(
        doc,
        "p",
        "prompt",
        "Label the highlighted turn: the speaker's emotion, or the listener's intent."
      )
    );
  }

  card.appendChild(renderTurns(doc, item));

  const suggestions = el(doc, "div", "suggestions");
  item.suggestions.forEach(([label, confidence], i) => {
    suggestions.appendChild(suggestionButton(doc, label, confidence, i, handlers));
  });
  card.appendChild(suggestions);
  card.appendChild(fullPicker(doc, labels, handlers));
  card.appendChild(customEntry(doc, handlers));
  container.appendChild(card);
}

export function renderQuizFeedback(
  container: HTMLElement,
  feedback: QuizFeedback,
  onContinue: () => void
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = el(
    doc,
    "div",
    feedback.correct ? "quiz-feedback correct" : "quiz-feedback wrong"
  );
  panel.appendChild(
    el(doc, "p", "verdict", feedback.correct ? "Correct!" : "Not quite.")
  );
  const gold = el(doc, "p", "gold-label");
  gold.append("The expected label was ", el(doc, "strong", undefined, feedback.gold), ".");
  panel.appendChild(gold);
  const next = el(doc, "button", "continue", "Continue");
  next.addEventListener("click", onContinue);
  panel.appendChild(next);
  container.appendChild(panel);
}

export function renderCompletion(
  container: HTMLElement,
  session: HitSession,
  onNext?: () => void
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = el(doc, "div", "completion");
  panel.appendChild(el(doc, "h2", undefined, "All done, thank you!"));
  panel.appendChild(
    el(
      doc,
      "p",
      "final-score",
      `You answered ${session.total} items; quiz score ${session.quizScoreText()}.`
    )
  );
  if (onNext) {
    const next = el(doc, "button", "next-hit", "Claim another task");
    next.addEventListener("click", onNext);
    panel.appendChild(next);
  }
  container.appendChild(panel);
}

export function renderNoWork(container: HTMLElement, message: string): void {
  container.textContent = "";
  container.appendChild(
    el(container.ownerDocument, "div", "no-work", message)
  );
}

/** Failure screen that keeps the pending selection; Retry resubmits it. */
export function renderRetry(
  container: HTMLElement,
  message: string,
  onRetry: () => void
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = el(doc, "div", "retry");
  panel.appendChild(el(doc, "p", "error-text", message));
  const button = el(doc, "button", "retry-button", "Retry");
  button.addEventListener("click", onRetry);
  panel.appendChild(button);
  container.appendChild(panel);
}

export function renderWorkerGate(
  container: HTMLElement,
  onSubmit: (worker: string) => void
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = el(doc, "div", "worker-gate");
  panel.appendChild(el(doc, "p", undefined, "Enter your worker id to begin."));
  const input = el(doc, "input", "worker-input");
  input.type = "text";
  const start = el(doc, "button", "worker-start", "Start");
  start.addEventListener("click", () => {
    if (input.value.trim()) onSubmit(input.value.trim());
  });
  panel.append(input, start);
  container.appendChild(panel);
}
