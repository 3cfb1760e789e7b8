/*
 * Client-side HIT session state.
 *
 * The server is the source of truth: a session is rebuilt from the HIT
 * payload (which carries the worker's already-answered item ids), so a
 * page reload resumes exactly where the records left off. Selections
 * only ever grow, and the cursor can only move past an item once that
 * item has an answer.
 */

import type { AnnotationBody, HitItem, HitPayload, QuizFeedback } from "./api.js";

export type LabelChoice =
  | { kind: "top3"; label: string }
  | { kind: "taxonomy"; label: string }
  | { kind: "custom"; text: string };

export function validateChoice(choice: LabelChoice): string | null {
  if (choice.kind === "custom") {
    if (!choice.text || !choice.text.trim()) {
      return "custom label must not be empty";
    }
    return null;
  }
  if (!choice.label) return "label must not be empty";
  return null;
}

// Translate a UI choice into the POST /annotations body fields.
export function choiceBody(
  choice: LabelChoice
): Pick<AnnotationBody, "label" | "custom_label" | "chose_from_top3"> {
  const problem = validateChoice(choice);
  if (problem) throw new Error(problem);
  if (choice.kind === "custom") {
    return { custom_label: choice.text.trim(), chose_from_top3: false };
  }
  return { label: choice.label, chose_from_top3: choice.kind === "top3" };
}

export function chosenText(choice: LabelChoice): string {
  return choice.kind === "custom" ? choice.text.trim() : choice.label;
}

export class HitSession {
  readonly hitId: string;
  readonly items: HitItem[];
  private answered: Set<string>;
  private selections = new Map<string, LabelChoice>();
  private cursor: number;
  private quizCorrect = 0;
  private quizAnswered = 0;

  constructor(payload: HitPayload) {
    this.hitId = payload.hit_id;
    this.items = payload.items;
    this.answered = new Set(payload.answered ?? []);
    this.cursor = this.firstUnanswered();
  }

  private firstUnanswered(): number {
    for (let i = 0; i < this.items.length; i++) {
      if (!this.answered.has(this.items[i].item_id)) return i;
    }
    return this.items.length;
  }

  get total(): number {
    return this.items.length;
  }

  get quizTotal(): number {
    return this.items.filter((it) => it.kind === "quiz").length;
  }

  /** 1-based position of the item being worked on, clamped at total. */
  get position(): number {
    return Math.min(this.cursor + 1, this.items.length);
  }

  progressText(): string {
    return `${this.position}/${this.total}`;
  }

  quizScoreText(): string {
    return `${this.quizCorrect}/${this.quizTotal}`;
  }

  get quizScore(): { correct: number; answered: number } {
    return { correct: this.quizCorrect, answered: this.quizAnswered };
  }

  /**
   * Quiz outcomes live server-side; after a reload the payload tells us
   * which items are answered but not how the quizzes went, so the score
   * shown is re-seeded from GET /progress.
   */
  seedQuizScore(correct: number, answeredCount: number): void {
    this.quizCorrect = correct;
    this.quizAnswered = answeredCount;
  }

  currentItem(): HitItem | null {
    return this.isComplete() ? null : this.items[this.cursor];
  }

  isComplete(): boolean {
    return this.cursor >= this.items.length;
  }

  isAnswered(itemId: string): boolean {
    return this.answered.has(itemId);
  }

  answeredCount(): number {
    return this.answered.size;
  }

  selection(itemId: string): LabelChoice | undefined {
    return this.selections.get(itemId);
  }

  /**
   * Record an accepted answer for the current item and advance. Rejects
   * out-of-order answers and double-answers; the caller is expected to
   * have had the POST accepted (or 409'd as already-recorded) first.
   */
  record(itemId: string, choice: LabelChoice, feedback: QuizFeedback | null): void {
    const current = this.currentItem();
    if (current === null) {
      throw new Error("session already complete");
    }
    if (current.item_id !== itemId) {
      throw new Error(
        `cannot answer ${itemId} while ${current.item_id} is still open`
      );
    }
    if (this.answered.has(itemId)) {
      throw new Error(`item ${itemId} already answered`);
    }
    const problem = validateChoice(choice);
    if (problem) throw new Error(problem);

    this.selections.set(itemId, choice);
    this.answered.add(itemId);
    if (current.kind === "quiz" && feedback) {
      this.quizAnswered += 1;
      if (feedback.correct) this.quizCorrect += 1;
    }
    this.cursor = this.firstUnanswered();
  }

  submissionBody(workerId: string, choice: LabelChoice): AnnotationBody {
    const current = this.currentItem();
    if (current === null) throw new Error("session already complete");
    return {
      worker_id: workerId,
      hit_id: this.hitId,
      item_id: current.item_id,
      turn_index: current.turn_index,
      ...choiceBody(choice),
    };
  }
}
