/*
 * Page controller: claims a task bundle, walks the worker through its
 * items, and posts one annotation per item.
 *
 * Submission discipline: while a POST is in flight every further
 * choice is ignored (`busy` guard), so double clicks produce exactly
 * one record; if the server still reports a duplicate (409) the item
 * is treated as answered and the view moves on. Any other failure
 * shows a retry screen holding the selection, nothing is lost.
 */

import {
  AnnotationApi,
  ApiError,
  ConflictError,
  NoOpenHits,
} from "./api.js";
import type { LabelsResponse, QuizFeedback } from "./api.js";
import { HitSession, validateChoice } from "./state.js";
import type { LabelChoice } from "./state.js";
import {
  renderCompletion,
  renderItem,
  renderNoWork,
  renderProgress,
  renderQuizFeedback,
  renderRetry,
  renderWorkerGate,
} from "./ui.js";

const WORKER_KEY = "annotation-worker-id";

export interface AppConfig {
  root: HTMLElement;
  baseUrl?: string;
  worker?: string;
  fetchFn?: (input: string, init?: RequestInit) => Promise<Response>;
}

type Screen = "item" | "feedback" | "done" | "retry" | "empty";

export class AppController {
  readonly api: AnnotationApi;
  readonly worker: string;
  session: HitSession | null = null;
  labels: LabelsResponse = { emotions: [], intents: [], custom: [] };
  screen: Screen = "empty";

  private statusEl: HTMLElement;
  private stageEl: HTMLElement;
  private busy = false;
  private opSeq: Promise<void> = Promise.resolve();
  private keyListener: (event: KeyboardEvent) => void;
  private doc: Document;

  constructor(private config: AppConfig) {
    this.api = new AnnotationApi(config.baseUrl ?? "", config.fetchFn);
    this.worker = config.worker ?? "";
    this.doc = config.root.ownerDocument;

    config.root.textContent = "";
    const header = this.doc.createElement("header");
    header.className = "masthead";
    const title = this.doc.createElement("h1");
    title.textContent = "Dialogue annotation";
    this.statusEl = this.doc.createElement("div");
    this.statusEl.className = "status";
    header.append(title, this.statusEl);
    this.stageEl = this.doc.createElement("main");
    this.stageEl.className = "stage";
    config.root.append(header, this.stageEl);

    this.keyListener = (event) => this.handleKey(event);
    this.doc.addEventListener("keydown", this.keyListener);
  }

  async load(): Promise<void> {
    this.labels = await this.api.labels();
    try {
      const payload = await this.api.nextHit(this.worker);
      this.session = new HitSession(payload);
    } catch (err) {
      if (err instanceof NoOpenHits) {
        this.session = null;
        this.screen = "empty";
        renderNoWork(this.stageEl, "No open tasks right now, check back later.");
        return;
      }
      throw err;
    }
    await this.restoreQuizScore();
    this.showCurrent();
  }

  // Answered item ids come back with the HIT payload, but quiz outcomes
  // only exist server-side; pull them so the score survives a reload.
  private async restoreQuizScore(): Promise<void> {
    if (!this.session || this.session.answeredCount() === 0) return;
    try {
      const progress = await this.api.progress();
      const mine = progress.workers.find((w) => w.worker_id === this.worker);
      const entry = mine?.hits.find((h) => h.hit_id === this.session!.hitId);
      if (entry) {
        this.session.seedQuizScore(entry.quiz_correct, entry.quiz_answered);
      }
    } catch {
      // score display is cosmetic; never block the task on it
    }
  }

  private showCurrent(): void {
    if (!this.session) return;
    renderProgress(this.statusEl, this.session);
    if (this.session.isComplete()) {
      this.screen = "done";
      renderCompletion(this.stageEl, this.session, () => this.claimNext());
      return;
    }
    this.screen = "item";
    const item = this.session.currentItem()!;
    renderItem(this.stageEl, item, this.labels, {
      onChoice: (choice) => this.submitChoice(item.item_id, choice),
    });
  }

  private showFeedback(feedback: QuizFeedback): void {
    this.screen = "feedback";
    renderQuizFeedback(this.stageEl, feedback, () => this.showCurrent());
  }

  /** Serialize user actions; drop any that arrive while one is running. */
  private run(op: () => Promise<void>): void {
    if (this.busy) return;
    this.busy = true;
    this.opSeq = (async () => {
      try {
        await op();
      } finally {
        this.busy = false;
      }
    })();
  }

  /** Resolves once every queued action (and its re-render) finished. */
  async settle(): Promise<void> {
    let prev: Promise<void>;
    do {
      prev = this.opSeq;
      await prev;
    } while (prev !== this.opSeq);
  }

  submitChoice(itemId: string, choice: LabelChoice): void {
    if (this.screen !== "item" && this.screen !== "retry") return;
    if (!this.session || this.session.isComplete()) return;
    if (validateChoice(choice) !== null) return;
    const item = this.session.currentItem()!;
    // a click from an already-replaced card must not answer the next item
    if (item.item_id !== itemId) return;
    if (this.session.isAnswered(item.item_id)) return;

    this.run(async () => {
      try {
        const response = await this.api.submit(
          this.session!.submissionBody(this.worker, choice)
        );
        this.session!.record(item.item_id, choice, response.quiz);
        if (response.quiz) {
          renderProgress(this.statusEl, this.session!);
          this.showFeedback(response.quiz);
        } else {
          this.showCurrent();
        }
      } catch (err) {
        if (err instanceof ConflictError) {
          // already recorded server-side (e.g. resubmit after a lost
          // response); trust the server and move on
          this.session!.record(item.item_id, choice, null);
          await this.restoreQuizScore();
          this.showCurrent();
          return;
        }
        const message =
          err instanceof ApiError
            ? `The server rejected the submission (${err.detail}).`
            : "Could not reach the annotation server.";
        this.screen = "retry";
        renderRetry(this.stageEl, message, () => this.submitChoice(itemId, choice));
      }
    });
  }

  claimNext(): void {
    this.run(async () => {
      await this.load();
    });
  }

  private handleKey(event: KeyboardEvent): void {
    if (this.screen !== "item") return;
    const target = event.target as HTMLElement | null;
    if (target && ["INPUT", "SELECT", "TEXTAREA"].includes(target.tagName)) return;
    const index = ["1", "2", "3"].indexOf(event.key);
    if (index < 0) return;
    const buttons = this.stageEl.querySelectorAll<HTMLButtonElement>("button.suggestion");
    buttons[index]?.click();
  }

  stop(): void {
    this.doc.removeEventListener("keydown", this.keyListener);
  }
}

function workerFromEnvironment(doc: Document): string | null {
  const fromUrl = new URLSearchParams(doc.defaultView?.location.search ?? "").get(
    "worker"
  );
  if (fromUrl && fromUrl.trim()) return fromUrl.trim();
  try {
    return doc.defaultView?.localStorage.getItem(WORKER_KEY) ?? null;
  } catch {
    return null;
  }
}

function rememberWorker(doc: Document, worker: string): void {
  try {
    doc.defaultView?.localStorage.setItem(WORKER_KEY, worker);
  } catch {
    // storage may be unavailable; the id still lives for this page
  }
}

export async function startApp(config: AppConfig): Promise<AppController> {
  let worker = config.worker ?? workerFromEnvironment(config.root.ownerDocument);
  if (!worker) {
    worker = await new Promise<string>((resolve) => {
      renderWorkerGate(config.root, resolve);
    });
    rememberWorker(config.root.ownerDocument, worker);
  }
  const controller = new AppController({ ...config, worker });
  await controller.load();
  return controller;
}
