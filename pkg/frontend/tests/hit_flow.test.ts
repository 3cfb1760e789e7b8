// @vitest-environment jsdom
/*
 * End-to-end: a scripted DOM session against a live annotation service.
 *
 * The service is the real thing (spawned CLI process over the bundled
 * corpus artifacts); the page is the real thing (startApp wiring real
 * click handlers). The script walks one full 20-item task, exercising
 * every input path (keyboard shortcut, top-3 click, full picker, free
 * text), a double-click on submit, and a mid-task reload.
 */

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotationApi, ConflictError } from "../src/api.js";
import { startApp, type AppController } from "../src/main.js";
import { launchService, type LiveService } from "./setup/service.js";

let service: LiveService;
let api: AnnotationApi;

beforeAll(async () => {
  service = await launchService();
  api = new AnnotationApi(service.baseUrl);
}, 240000);

afterAll(async () => {
  if (service) await service.stop();
});

function newRoot(): HTMLElement {
  const root = document.createElement("div");
  document.body.appendChild(root);
  return root;
}

function clickSuggestion(root: HTMLElement, index: number): void {
  const buttons = root.querySelectorAll<HTMLButtonElement>("button.suggestion");
  expect(buttons.length).toBe(3);
  buttons[index].click();
}

function pickFromTaxonomy(root: HTMLElement, label: string): void {
  const select = root.querySelector<HTMLSelectElement>(".other-label select")!;
  select.value = label;
  root.querySelector<HTMLButtonElement>("button.use-label")!.click();
}

describe("live annotation round", () => {
  it("completes a 20-item task with quiz feedback, one record per item, and reload resume", async () => {
    const worker = "w-e2e-flow";
    let root = newRoot();
    let controller: AppController = await startApp({
      root,
      baseUrl: service.baseUrl,
      worker,
    });

    const hitId = controller.session!.hitId;
    const items = controller.session!.items;
    expect(items).toHaveLength(20);
    expect(items.filter((i) => i.kind === "dialogue")).toHaveLength(15);
    expect(items.filter((i) => i.kind === "quiz")).toHaveLength(5);
    expect(root.querySelector(".progress")!.textContent).toBe("1/20");

    const allLabels = await api.labels();
    const taxonomy = [...allLabels.emotions, ...allLabels.intents];

    let dialoguesAnswered = 0;
    let feedbackSeen = 0;
    let correctSeen = 0;
    let usedKeyboard = false;
    let usedPicker = false;
    let usedCustom = false;
    let doubleClicked = false;
    let refreshed = false;

    for (let guard = 0; guard < 40 && !controller.session!.isComplete(); guard++) {
      const item = controller.session!.currentItem()!;

      if (item.kind === "dialogue") {
        if (!usedKeyboard) {
          document.dispatchEvent(new KeyboardEvent("keydown", { key: "1" }));
          await controller.settle();
          expect(controller.session!.selection(item.item_id)).toEqual({
            kind: "top3",
            label: item.suggestions[0][0],
          });
          usedKeyboard = true;
        } else if (!usedPicker) {
          pickFromTaxonomy(root, "Joyful");
          await controller.settle();
          usedPicker = true;
        } else if (!usedCustom) {
          root.querySelector<HTMLInputElement>(".new-label input")!.value = "Greeting";
          root.querySelector<HTMLButtonElement>("button.add-label")!.click();
          await controller.settle();
          usedCustom = true;
        } else if (!doubleClicked) {
          // two rapid clicks on the same button must yield one record
          const before = controller.session!.answeredCount();
          const button = root.querySelector<HTMLButtonElement>("button.suggestion")!;
          button.click();
          button.click();
          await controller.settle();
          expect(controller.session!.answeredCount()).toBe(before + 1);
          const remote = await api.getHit(hitId, worker);
          expect(remote.answered).toHaveLength(before + 1);
          doubleClicked = true;
        } else {
          clickSuggestion(root, 0);
          await controller.settle();
        }
        dialoguesAnswered += 1;
        // dialogue answers advance straight on, no grading interstitial
        expect(root.querySelector(".quiz-feedback")).toBeNull();
      } else {
        if (feedbackSeen === 0) {
          // a label outside the shown top-3 cannot be the gold one,
          // so the wrong-answer teaching panel must appear
          const shown = new Set(item.suggestions.map(([label]) => label));
          const wrong = taxonomy.find((label) => !shown.has(label))!;
          pickFromTaxonomy(root, wrong);
          await controller.settle();
          const panel = root.querySelector(".quiz-feedback")!;
          expect(panel.className).toContain("wrong");
          const gold = root.querySelector(".gold-label strong")!.textContent!;
          expect(shown.has(gold)).toBe(true);
        } else {
          clickSuggestion(root, 0);
          await controller.settle();
          expect(root.querySelector(".quiz-feedback")).not.toBeNull();
        }
        feedbackSeen += 1;
        if (root.querySelector(".quiz-feedback")!.className.includes("correct")) {
          correctSeen += 1;
        }
        root.querySelector<HTMLButtonElement>("button.continue")!.click();
        await controller.settle();
      }

      // simulate a page reload once, mid-task: fresh DOM, fresh state,
      // position must come back from the server
      if (!refreshed && controller.session!.answeredCount() === 7) {
        controller.stop();
        root.remove();
        root = newRoot();
        controller = await startApp({ root, baseUrl: service.baseUrl, worker });
        expect(controller.session!.hitId).toBe(hitId);
        expect(controller.session!.answeredCount()).toBe(7);
        expect(root.querySelector(".progress")!.textContent).toBe("8/20");
        refreshed = true;
      }
    }

    expect(controller.session!.isComplete()).toBe(true);
    expect(refreshed).toBe(true);
    expect(usedKeyboard && usedPicker && usedCustom && doubleClicked).toBe(true);
    expect(dialoguesAnswered).toBe(15);
    expect(feedbackSeen).toBe(5);

    expect(root.querySelector(".completion")).not.toBeNull();
    expect(root.querySelector(".final-score")!.textContent).toContain(
      `quiz score ${correctSeen}/5`
    );
    expect(root.querySelector(".progress")!.textContent).toBe("20/20");

    // server side: exactly 20 records, all distinct, task marked complete
    const remote = await api.getHit(hitId, worker);
    expect(remote.answered).toHaveLength(20);
    expect(new Set(remote.answered).size).toBe(20);
    const progress = await api.progress();
    const hitRow = progress.hits.find((h) => h.hit_id === hitId)!;
    expect(hitRow.records).toBe(20);
    expect(hitRow.completed_by).toContain(worker);

    // and the server's own duplicate gate still holds for a raw resubmit
    const raw = items[0];
    const err = await api
      .submit({
        worker_id: worker,
        hit_id: hitId,
        item_id: raw.item_id,
        turn_index: raw.turn_index,
        label: "Sad",
        chose_from_top3: true,
      })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ConflictError);
    const after = await api.progress();
    expect(after.hits.find((h) => h.hit_id === hitId)!.records).toBe(20);

    controller.stop();
    root.remove();
  }, 120000);

  it("surfaces typed custom labels in the label inventory", async () => {
    // the flow above typed "Greeting"; the service casefolds on harvest
    const labels = await api.labels();
    const greeting = labels.custom.find((c) => c.label === "greeting");
    expect(greeting).toBeDefined();
    expect(greeting!.count).toBeGreaterThanOrEqual(1);
  });

  it("resumes the same task when reloading before any answer", async () => {
    const worker = "w-e2e-reload";
    let root = newRoot();
    let controller = await startApp({ root, baseUrl: service.baseUrl, worker });
    const hitId = controller.session!.hitId;
    controller.stop();
    root.remove();

    root = newRoot();
    controller = await startApp({ root, baseUrl: service.baseUrl, worker });
    expect(controller.session!.hitId).toBe(hitId);
    expect(root.querySelector(".progress")!.textContent).toBe("1/20");
    controller.stop();
    root.remove();
  });

  it("holds the selection through a network failure and lands it on retry", async () => {
    const worker = "w-e2e-retry";
    let failNext = true;
    const flaky = (input: string, init?: RequestInit) => {
      if (failNext && init?.method === "POST") {
        failNext = false;
        return Promise.reject(new TypeError("socket hiccup"));
      }
      return fetch(input, init);
    };

    const root = newRoot();
    const controller = await startApp({
      root,
      baseUrl: service.baseUrl,
      worker,
      fetchFn: flaky,
    });
    const item = controller.session!.currentItem()!;
    const label = item.suggestions[1][0];
    clickSuggestion(root, 1);
    await controller.settle();

    expect(root.querySelector(".retry")).not.toBeNull();
    expect(root.querySelector(".error-text")!.textContent).toMatch(/not reach/);
    expect(controller.session!.answeredCount()).toBe(0);

    root.querySelector<HTMLButtonElement>("button.retry-button")!.click();
    await controller.settle();
    expect(controller.session!.answeredCount()).toBe(1);
    expect(controller.session!.selection(item.item_id)).toEqual({ kind: "top3", label });

    const remote = await api.getHit(controller.session!.hitId, worker);
    expect(remote.answered).toContain(item.item_id);
    controller.stop();
    root.remove();
  });

  it("serves the compiled page shell over the service's static route", async () => {
    const page = await fetch(`${service.baseUrl}/`);
    expect(page.ok).toBe(true);
    const html = await page.text();
    expect(html).toContain('id="app"');
    expect(html).toContain("./main.js");

    const js = await fetch(`${service.baseUrl}/main.js`);
    expect(js.ok).toBe(true);
    expect(await js.text()).toContain("startApp");

    const css = await fetch(`${service.baseUrl}/style.css`);
    expect(css.ok).toBe(true);
  });
});
