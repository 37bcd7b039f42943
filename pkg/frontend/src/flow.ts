/**
 * Session flow state machine, framework-free so the browser UI, the headless
 * driver, and the tests all share it.
 *
 * All durable state lives in the service; a view is rebuilt from the API at
 * any time (page refresh resumes at the first unanswered item). The view
 * never holds truth labels: it only knows item ids and which are answered.
 */

import { Answer, ApiClient, ApiError, ConfusionReport } from "./api.js";

export interface SessionView {
  readonly sessionId: string;
  readonly itemIds: readonly string[];
  /** Index of the next unanswered item; equals itemIds.length when done. */
  readonly cursor: number;
  readonly answered: Readonly<Record<string, Answer | true>>;
}

function viewFrom(sessionId: string, itemIds: string[], answeredIds: string[]): SessionView {
  const answered: Record<string, true> = {};
  for (const id of answeredIds) answered[id] = true;
  let cursor = 0;
  while (cursor < itemIds.length && answered[itemIds[cursor]]) cursor += 1;
  return { sessionId, itemIds, cursor, answered };
}

export async function startFlow(api: ApiClient, n: number, seed?: number): Promise<SessionView> {
  const created = await api.createSession(n, undefined, seed);
  return resumeFlow(api, created.session_id);
}

/** Rebuild the view from the service (source of truth), e.g. after reload. */
export async function resumeFlow(api: ApiClient, sessionId: string): Promise<SessionView> {
  const listing = await api.getItems(sessionId);
  return viewFrom(
    sessionId,
    listing.items.map((item) => item.item_id),
    listing.items.filter((item) => item.answered).map((item) => item.item_id),
  );
}

export function currentItem(view: SessionView): string | null {
  return view.cursor < view.itemIds.length ? view.itemIds[view.cursor] : null;
}

export function isComplete(view: SessionView): boolean {
  return view.cursor >= view.itemIds.length;
}

export function progress(view: SessionView): { answered: number; total: number } {
  return { answered: Object.keys(view.answered).length, total: view.itemIds.length };
}

/**
 * Record the choice for the current item and advance the cursor.
 *
 * A 409 conflict means the answer was already recorded (double submit or a
 * race with another tab): advance without resubmitting, per protocol.
 */
export async function answerAndAdvance(
  api: ApiClient,
  view: SessionView,
  choice: Answer,
): Promise<SessionView> {
  const itemId = currentItem(view);
  if (itemId === null) return view;
  try {
    await api.postAnswer(itemId, choice);
  } catch (error) {
    if (!(error instanceof ApiError) || error.status !== 409) throw error;
  }
  const answered = { ...view.answered, [itemId]: choice };
  let cursor = view.cursor + 1;
  while (cursor < view.itemIds.length && answered[view.itemIds[cursor]]) cursor += 1;
  return { ...view, answered, cursor };
}

export async function fetchReport(api: ApiClient, view: SessionView): Promise<ConfusionReport> {
  return api.getReport(view.sessionId);
}

export function formatPercent(rate: number): string {
  return `${(rate * 100).toFixed(0)}%`;
}
