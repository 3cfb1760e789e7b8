/*
 * Typed client for the annotation service HTTP API.
 *
 * All requests go through one helper so error mapping stays uniform:
 * 409 becomes ConflictError (duplicate submit / unclaimed HIT), a 404
 * from /hits/next becomes NoOpenHits, everything else non-2xx becomes
 * ApiError with the server's detail string.
 */

export type ItemKind = "dialogue" | "quiz";

export interface HitItem {
  kind: ItemKind;
  item_id: string;
  turn_index: number;
  texts: string[];
  // [label, confidence] pairs, already sorted by the server
  suggestions: [string, number][];
}

export interface HitPayload {
  hit_id: string;
  workers_per_hit: number;
  items: HitItem[];
  // item_ids this worker already answered; present when ?worker= given
  answered?: string[];
}

export interface QuizFeedback {
  correct: boolean;
  gold: string;
}

export interface SubmitResponse {
  status: string;
  quiz: QuizFeedback | null;
}

export interface AnnotationBody {
  worker_id: string;
  hit_id: string;
  item_id: string;
  turn_index: number;
  label?: string;
  custom_label?: string;
  chose_from_top3: boolean;
}

export interface CustomLabelCount {
  label: string;
  count: number;
}

export interface LabelsResponse {
  emotions: string[];
  intents: string[];
  custom: CustomLabelCount[];
}

export interface WorkerHitProgress {
  hit_id: string;
  quiz_correct: number;
  quiz_answered: number;
  passed: boolean;
}

export interface ProgressResponse {
  hits: {
    hit_id: string;
    assigned: string[];
    completed_by: string[];
    records: number;
  }[];
  workers: {
    worker_id: string;
    hits: WorkerHitProgress[];
  }[];
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ConflictError extends ApiError {
  constructor(detail: string) {
    super(409, detail);
    this.name = "ConflictError";
  }
}

export class NoOpenHits extends ApiError {
  constructor(detail: string) {
    super(404, detail);
    this.name = "NoOpenHits";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function detailOf(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText || `status ${response.status}`;
  }
}

export class AnnotationApi {
  private fetchFn: FetchLike;

  constructor(private baseUrl: string = "", fetchFn?: FetchLike) {
    // bind so callers can hand us the bare global without losing `this`
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (response.status === 409) {
      throw new ConflictError(await detailOf(response));
    }
    if (!response.ok) {
      throw new ApiError(response.status, await detailOf(response));
    }
    return (await response.json()) as T;
  }

  async nextHit(worker: string): Promise<HitPayload> {
    try {
      return await this.request<HitPayload>(
        `/hits/next?worker=${encodeURIComponent(worker)}`
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        throw new NoOpenHits(err.detail);
      }
      throw err;
    }
  }

  getHit(hitId: string, worker?: string): Promise<HitPayload> {
    const query = worker ? `?worker=${encodeURIComponent(worker)}` : "";
    return this.request<HitPayload>(`/hits/${encodeURIComponent(hitId)}${query}`);
  }

  submit(body: AnnotationBody): Promise<SubmitResponse> {
    return this.request<SubmitResponse>("/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  labels(): Promise<LabelsResponse> {
    return this.request<LabelsResponse>("/labels");
  }

  progress(): Promise<ProgressResponse> {
    return this.request<ProgressResponse>("/progress");
  }
}
