/** Typed client for the annotation service HTTP schema. */

export type Label = "metonymic" | "non-metonymic";
export type Flag = "graphic" | "bias";

export interface Task {
  image_id: string;
  concept: string;
  image_url: string;
  remaining: number;
}

export interface AgreementStats {
  n_pairs: number;
  agreement: number | null;
}

export interface Submission {
  image_id: string;
  label: Label;
  flags: Flag[];
  association_type?: string;
}

/** A response the server produced: the request reached it. */
export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`API error ${status}: ${detail}`);
  }
}

/** The server was unreachable; the caller should keep state and retry. */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super(`API unreachable: ${String(cause)}`);
  }
}

/** What the session layer needs from the transport. */
export interface AnnotationApi {
  nextTask(annotator: string): Promise<Task | null>;
  submitLabel(submission: Submission): Promise<void>;
  agreement(): Promise<AgreementStats>;
  guidelines(): Promise<string>;
  imageUrl(task: Task): string;
}

export class ApiClient implements AnnotationApi {
  constructor(
    readonly baseUrl: string,
    readonly token: string,
    private fetchFn: typeof fetch = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private headers(): Record<string, string> {
    return {
      Authorization: `Bearer ${this.token}`,
      "Content-Type": "application/json",
    };
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        ...init,
        headers: { ...this.headers(), ...(init?.headers ?? {}) },
      });
    } catch (cause) {
      throw new NetworkError(cause);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  /** Next unlabeled task for this annotator, or null when done. */
  async nextTask(annotator: string): Promise<Task | null> {
    const response = await this.request(
      `/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    );
    const body = await response.json();
    if (body.done) return null;
    return body as Task;
  }

  async submitLabel(submission: Submission): Promise<void> {
    await this.request("/labels", {
      method: "POST",
      body: JSON.stringify(submission),
    });
  }

  async agreement(): Promise<AgreementStats> {
    const response = await this.request("/stats/agreement");
    return (await response.json()) as AgreementStats;
  }

  async guidelines(): Promise<string> {
    const response = await this.request("/guidelines");
    return await response.text();
  }

  /** Absolute URL for a task's image path. */
  imageUrl(task: Task): string {
    return this.baseUrl + task.image_url;
  }
}
