// Session state machine. The server is the source of truth for progress; the
// client only remembers which session id belongs to (pair set, subject) so a
// reload resumes instead of restarting. Responses carry a client-generated
// response id fixed at display time, so double submissions of the same pair
// collapse into one count, and a local FIFO queue retries failed posts in
// order without ever skipping a pair.

import { ApiError, NextPayload, PendingPair, StudyApi } from "./api.js";

export type Connectivity = "online" | "retrying";

export interface SessionView {
  sessionId: string;
  totalPairs: number;
  answered: number;
  current: PendingPair | null;
  done: boolean;
  connectivity: Connectivity;
}

export interface KeyValueStore {
  get(key: string): string | null;
  set(key: string, value: string): void;
}

export class MemoryStore implements KeyValueStore {
  private data = new Map<string, string>();
  get(key: string): string | null {
    return this.data.get(key) ?? null;
  }
  set(key: string, value: string): void {
    this.data.set(key, value);
  }
}

type QueuedResponse = {
  pairIndex: number;
  choice: "left" | "right";
  responseMs: number;
  responseId: string;
};

function isDone(payload: NextPayload): payload is { done: true; answered: number; total_pairs: number } {
  return "done" in payload && payload.done === true;
}

export class SessionRunner {
  private sessionId = "";
  private totalPairs = 0;
  private answered = 0;
  private current: PendingPair | null = null;
  private currentResponseId = "";
  private shownAt = 0;
  private done = false;
  private connectivity: Connectivity = "online";
  private queue: QueuedResponse[] = [];
  private nonce = 0;

  constructor(
    private api: StudyApi,
    private store: KeyValueStore = new MemoryStore(),
    private now: () => number = () => Date.now(),
  ) {}

  view(): SessionView {
    return {
      sessionId: this.sessionId,
      totalPairs: this.totalPairs,
      answered: this.answered,
      current: this.current,
      done: this.done,
      connectivity: this.connectivity,
    };
  }

  async startOrResume(pairSetId: string, subjectId: string): Promise<SessionView> {
    const key = `worthiness-session:${pairSetId}:${subjectId}`;
    const stored = this.store.get(key);
    if (stored) {
      try {
        this.sessionId = stored;
        await this.advance();
        return this.view();
      } catch (error) {
        if (!(error instanceof ApiError && error.status === 404)) throw error;
        // stale session id (e.g. server state was rebuilt); start fresh
      }
    }
    const created = await this.api.createSession(pairSetId, subjectId);
    this.sessionId = created.session_id;
    this.totalPairs = created.total_pairs;
    this.store.set(key, this.sessionId);
    await this.advance();
    return this.view();
  }

  // Fetch the next unanswered pair and stamp a fresh response id for it.
  private async advance(): Promise<void> {
    const payload = await this.api.nextPair(this.sessionId);
    this.totalPairs = payload.total_pairs;
    this.answered = payload.answered;
    if (isDone(payload)) {
      this.done = true;
      this.current = null;
      return;
    }
    this.done = false;
    this.current = payload;
    this.nonce += 1;
    this.currentResponseId = `${this.sessionId}-p${payload.pair_index}-n${this.nonce}`;
    this.shownAt = this.now();
  }

  /** Forced choice for the displayed pair; measured from display to call. */
  async submitChoice(side: "left" | "right"): Promise<SessionView> {
    if (this.current === null) {
      return this.view();
    }
    const pending: QueuedResponse = {
      pairIndex: this.current.pair_index,
      choice: side,
      responseMs: this.now() - this.shownAt,
      responseId: this.currentResponseId,
    };
    // double submissions of the displayed pair reuse the same response id
    if (!this.queue.some((q) => q.responseId === pending.responseId)) {
      this.queue.push(pending);
    }
    await this.drain();
    return this.view();
  }

  /** Retry queued responses (strictly in order), then move on when clear. */
  async drain(): Promise<SessionView> {
    while (this.queue.length > 0) {
      const head = this.queue[0];
      try {
        await this.api.postResponse(
          this.sessionId,
          head.pairIndex,
          head.choice,
          head.responseMs,
          head.responseId,
        );
      } catch (error) {
        if (error instanceof ApiError && error.status === 409) {
          // already counted under a different submission of the same pair
          this.queue.shift();
          continue;
        }
        if (error instanceof ApiError) {
          this.queue.shift(); // a rejected response never becomes valid
          throw error;
        }
        this.connectivity = "retrying"; // network failure: keep it queued
        return this.view();
      }
      this.queue.shift();
    }
    this.connectivity = "online";
    if (this.current !== null) {
      await this.advance();
    }
    return this.view();
  }

  pendingCount(): number {
    return this.queue.length;
  }
}
