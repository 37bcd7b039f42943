/**
 * Typed client for the blind-test HTTP+JSON API.
 *
 * Endpoints: POST /sessions, GET /sessions/{id}/items,
 * GET /items/{id}/image, POST /items/{id}/answer, GET /sessions/{id}/report.
 * Image URLs are opaque item ids; no payload before the report carries truth.
 */

export type Answer = "original_clean" | "corrected";

export interface ItemListing {
  item_id: string;
  answered: boolean;
}

export interface ItemsResponse {
  session_id: string;
  patch_size: number;
  items: ItemListing[];
  answered_count: number;
  complete: boolean;
}

export interface ConfusionReport {
  session_id: string;
  n: number;
  matrix: Record<string, Record<string, number>>;
  corrected_as_original: number;
  clean_as_corrected: number;
  complete: boolean;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly token?: string,
  ) {}

  private headers(json: boolean): Record<string, string> {
    const headers: Record<string, string> = {};
    if (json) headers["Content-Type"] = "application/json";
    if (this.token) headers["X-Auth-Token"] = this.token;
    return headers;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.base}${path}`, {
      method,
      headers: this.headers(body !== undefined),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createSession(n: number, patchSize?: number, seed?: number): Promise<{ session_id: string; n: number }> {
    const body: Record<string, number> = { n };
    if (patchSize !== undefined) body.patch_size = patchSize;
    if (seed !== undefined) body.seed = seed;
    return this.request("POST", "/sessions", body);
  }

  getItems(sessionId: string): Promise<ItemsResponse> {
    return this.request("GET", `/sessions/${sessionId}/items`);
  }

  /** Opaque image URL; reveals nothing about the patch's origin. */
  imageUrl(itemId: string): string {
    return `${this.base}/items/${itemId}/image`;
  }

  postAnswer(itemId: string, answer: Answer): Promise<{ recorded: boolean; answered_count: number; complete: boolean }> {
    return this.request("POST", `/items/${itemId}/answer`, { answer });
  }

  getReport(sessionId: string): Promise<ConfusionReport> {
    return this.request("GET", `/sessions/${sessionId}/report`);
  }
}
