// Thin client for the study service wire protocol. No extra endpoints:
// sessions, next-pair, responses, matrix, ranking.

export type PendingPair = {
  pair_index: number;
  left_image_url: string;
  right_image_url: string;
  answered: number;
  total_pairs: number;
};

export type DonePayload = { done: true; answered: number; total_pairs: number };
export type NextPayload = PendingPair | DonePayload;

export type RankingEntry = { id: string; weight: number; rank: number };

export class ApiError extends Error {
  constructor(
    public status: number,
    public errorName: string,
    detail: string,
  ) {
    super(`${errorName} (${status}): ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function parseError(response: Response): Promise<ApiError> {
  let name = "HttpError";
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") {
      name = body.error;
      detail = body.detail ?? detail;
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, name, detail);
}

export class StudyApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      throw await parseError(response);
    }
    return response;
  }

  async createSession(
    pairSetId: string,
    subjectId: string,
    seed?: number,
  ): Promise<{ session_id: string; total_pairs: number }> {
    const body: Record<string, unknown> = {
      pair_set_id: pairSetId,
      subject_id: subjectId,
    };
    if (seed !== undefined) body.seed = seed;
    const response = await this.request("/api/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return response.json();
  }

  async nextPair(sessionId: string): Promise<NextPayload> {
    const response = await this.request(`/api/sessions/${sessionId}/next`);
    return response.json();
  }

  async postResponse(
    sessionId: string,
    pairIndex: number,
    choice: "left" | "right",
    responseMs: number,
    responseId: string,
  ): Promise<void> {
    await this.request(`/api/sessions/${sessionId}/responses`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        pair_index: pairIndex,
        choice,
        response_ms: responseMs,
        response_id: responseId,
      }),
    });
  }

  async matrixCsv(pairSetId: string): Promise<string> {
    const response = await this.request(`/api/pairsets/${pairSetId}/matrix`);
    return response.text();
  }

  async ranking(
    pairSetId: string,
    epsilon = 1.0,
    tol = 1e-10,
  ): Promise<RankingEntry[]> {
    const response = await this.request(
      `/api/pairsets/${pairSetId}/ranking?epsilon=${epsilon}&tol=${tol}`,
    );
    const body = await response.json();
    return body.models;
  }

  imageUrl(relative: string): string {
    return `${this.baseUrl}${relative}`;
  }
}
