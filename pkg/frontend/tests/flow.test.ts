/**
 * Flow state-machine tests against an in-memory fake of the service API.
 * The fake keeps truth server-side, mirrors the wire schema exactly, and
 * enforces the same conflict semantics.
 */

import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import {
  answerAndAdvance,
  currentItem,
  fetchReport,
  isComplete,
  progress,
  resumeFlow,
  startFlow,
} from "../src/flow.js";

type Truth = "original_clean" | "corrected";

interface FakeItem {
  item_id: string;
  truth: Truth;
  answer: Truth | null;
}

class FakeService {
  sessions = new Map<string, FakeItem[]>();
  answerCalls = 0;

  create(n: number): string {
    const sid = `sess${this.sessions.size}`;
    const items: FakeItem[] = [];
    for (let i = 0; i < n; i += 1) {
      items.push({
        item_id: `${sid}-${String(i).padStart(4, "0")}`,
        truth: i % 2 === 0 ? "original_clean" : "corrected",
        answer: null,
      });
    }
    this.sessions.set(sid, items);
    return sid;
  }

  fetch = async (input: string | URL | Request, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? (JSON.parse(String(init.body)) as Record<string, unknown>) : {};

    if (method === "POST" && path === "/sessions") {
      const sid = this.create(Number(body.n));
      return json(200, { session_id: sid, n: body.n });
    }
    let match = path.match(/^\/sessions\/([^/]+)\/items$/);
    if (method === "GET" && match) {
      const items = this.sessions.get(match[1]);
      if (!items) return json(404, { detail: "no such session" });
      return json(200, {
        session_id: match[1],
        patch_size: 32,
        items: items.map((item) => ({ item_id: item.item_id, answered: item.answer !== null })),
        answered_count: items.filter((item) => item.answer !== null).length,
        complete: items.every((item) => item.answer !== null),
      });
    }
    match = path.match(/^\/items\/([^/]+)\/answer$/);
    if (method === "POST" && match) {
      this.answerCalls += 1;
      const sid = match[1].split("-")[0];
      const items = this.sessions.get(sid);
      const item = items?.find((candidate) => candidate.item_id === match![1]);
      if (!item) return json(404, { detail: "no such item" });
      if (item.answer !== null) return json(409, { detail: "already answered" });
      item.answer = body.answer as Truth;
      return json(200, { recorded: true });
    }
    match = path.match(/^\/sessions\/([^/]+)\/report$/);
    if (method === "GET" && match) {
      const items = this.sessions.get(match[1]);
      if (!items) return json(404, { detail: "no such session" });
      if (items.some((item) => item.answer === null)) return json(409, { detail: "incomplete" });
      const matrix = {
        original_clean: { original_clean: 0, corrected: 0 },
        corrected: { original_clean: 0, corrected: 0 },
      };
      for (const item of items) matrix[item.truth][item.answer as Truth] += 1;
      const nCorrected = matrix.corrected.original_clean + matrix.corrected.corrected;
      const nClean = matrix.original_clean.original_clean + matrix.original_clean.corrected;
      return json(200, {
        session_id: match[1],
        n: items.length,
        matrix,
        corrected_as_original: matrix.corrected.original_clean / nCorrected,
        clean_as_corrected: matrix.original_clean.corrected / nClean,
        complete: true,
      });
    }
    return json(404, { detail: `unhandled ${method} ${path}` });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

let service: FakeService;
let api: ApiClient;

beforeEach(() => {
  service = new FakeService();
  vi.stubGlobal("fetch", service.fetch);
  api = new ApiClient("http://fake");
});

describe("startFlow", () => {
  it("creates a session and shows 0/n progress", async () => {
    const view = await startFlow(api, 10);
    expect(view.itemIds).toHaveLength(10);
    expect(progress(view)).toEqual({ answered: 0, total: 10 });
    expect(currentItem(view)).toBe(view.itemIds[0]);
  });

  it("surfaces API failures instead of crashing", async () => {
    vi.stubGlobal("fetch", async () => json(500, { detail: "boom" }));
    await expect(startFlow(api, 10)).rejects.toThrow("boom");
  });
});

describe("answerAndAdvance", () => {
  it("answers all items and renders a report summing to n", async () => {
    let view = await startFlow(api, 10);
    for (let i = 0; i < 10; i += 1) {
      view = await answerAndAdvance(api, view, i % 2 === 0 ? "original_clean" : "corrected");
    }
    expect(isComplete(view)).toBe(true);
    const report = await fetchReport(api, view);
    const total = Object.values(report.matrix)
      .flatMap((row) => Object.values(row))
      .reduce((a, b) => a + b, 0);
    expect(total).toBe(10);
  });

  it("advances past a 409 conflict without resubmitting", async () => {
    let view = await startFlow(api, 4);
    const firstItem = currentItem(view)!;
    // another tab already answered the first item
    await api.postAnswer(firstItem, "corrected");
    const callsBefore = service.answerCalls;
    view = await answerAndAdvance(api, view, "original_clean");
    expect(service.answerCalls).toBe(callsBefore + 1); // one attempt, no retry
    expect(view.cursor).toBe(1);
    expect(currentItem(view)).toBe(view.itemIds[1]);
  });

  it("double submit of the same view advances exactly once per item", async () => {
    const view = await startFlow(api, 4);
    const afterFirst = await answerAndAdvance(api, view, "corrected");
    // stale view submits again (double click): conflict, still advances
    const afterStale = await answerAndAdvance(api, view, "corrected");
    expect(afterFirst.cursor).toBe(1);
    expect(afterStale.cursor).toBe(1);
    const items = service.sessions.get(view.sessionId)!;
    expect(items.filter((item) => item.answer !== null)).toHaveLength(1);
  });

  it("propagates non-conflict errors", async () => {
    const view = await startFlow(api, 4);
    vi.stubGlobal("fetch", async () => json(500, { detail: "storage down" }));
    await expect(answerAndAdvance(api, view, "corrected")).rejects.toThrow("storage down");
  });
});

describe("resumeFlow", () => {
  it("restores cursor to the first unanswered item after reload", async () => {
    let view = await startFlow(api, 6);
    view = await answerAndAdvance(api, view, "corrected");
    view = await answerAndAdvance(api, view, "original_clean");

    const restored = await resumeFlow(api, view.sessionId);
    expect(restored.cursor).toBe(2);
    expect(progress(restored)).toEqual({ answered: 2, total: 6 });
  });
});

describe("blindness", () => {
  it("the view never contains truth labels or revealing fields", async () => {
    let view = await startFlow(api, 6);
    view = await answerAndAdvance(api, view, "corrected");
    const serialized = JSON.stringify(view);
    expect(serialized).not.toContain("truth");
    // item ids are opaque: session prefix + position only
    for (const id of view.itemIds) {
      expect(id).toMatch(/^sess\d+-\d{4}$/);
    }
  });

  it("report values pass straight through from the API", async () => {
    let view = await startFlow(api, 10);
    // corrected items are the odd positions in the fake; mark 3 of 5 as original
    let correctedSeen = 0;
    for (let i = 0; i < 10; i += 1) {
      const truth = service.sessions.get(view.sessionId)![i].truth;
      let choice: Truth;
      if (truth === "corrected") {
        correctedSeen += 1;
        choice = correctedSeen <= 3 ? "original_clean" : "corrected";
      } else {
        choice = "original_clean";
      }
      view = await answerAndAdvance(api, view, choice);
    }
    const report = await fetchReport(api, view);
    expect(report.corrected_as_original).toBeCloseTo(0.6, 12);
    expect(report.clean_as_corrected).toBeCloseTo(0.0, 12);
  });
});

describe("ApiError", () => {
  it("carries status codes for the UI to branch on", async () => {
    vi.stubGlobal("fetch", async () => json(401, { detail: "missing token" }));
    try {
      await api.getItems("x");
      expect.unreachable();
    } catch (error) {
      expect(error).toBeInstanceOf(ApiError);
      expect((error as ApiError).status).toBe(401);
    }
  });
});
