import type { AnnotationSubmission, ApiErrorBody, ReviewItem, SubmissionResult } from './types.js';

/** Server rejected the request; carries the typed ApiError body. */
export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiErrorBody,
  ) {
    super(`${body.code}: ${body.message}`);
    this.name = 'ApiRequestError';
  }
}

/** The request never reached the server (offline, refused, timeout). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`network failure: ${String(cause)}`);
    this.name = 'NetworkError';
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(err);
    }
    if (!response.ok) {
      let body: ApiErrorBody;
      try {
        body = (await response.json()) as ApiErrorBody;
      } catch {
        body = { code: 'internal', message: `HTTP ${response.status}` };
      }
      throw new ApiRequestError(response.status, body);
    }
    return (await response.json()) as T;
  }

  /** Claim (or re-fetch) the next review item; null when the queue is empty. */
  async claimNext(annotatorId: string): Promise<ReviewItem | null> {
    const data = await this.request<{ item: ReviewItem | null }>(
      `/api/queue/next?annotator=${encodeURIComponent(annotatorId)}`,
    );
    return data.item;
  }

  async getItem(itemId: string): Promise<ReviewItem> {
    return this.request<ReviewItem>(`/api/items/${encodeURIComponent(itemId)}`);
  }

  async submitAnnotation(itemId: string, submission: AnnotationSubmission): Promise<SubmissionResult> {
    return this.request<SubmissionResult>(`/api/items/${encodeURIComponent(itemId)}/annotation`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(submission),
    });
  }

  async stats(): Promise<Record<string, unknown>> {
    return this.request<Record<string, unknown>>('/api/stats');
  }

  async exportAll(): Promise<string> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + '/api/export/all');
    } catch (err) {
      throw new NetworkError(err);
    }
    if (!response.ok) {
      throw new ApiRequestError(response.status, (await response.json()) as ApiErrorBody);
    }
    return response.text();
  }
}
