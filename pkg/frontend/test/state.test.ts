import { describe, expect, it } from "vitest";

import {
  AgreementStats,
  AnnotationApi,
  ApiError,
  NetworkError,
  Submission,
  Task,
} from "../src/api.js";
import { AnnotationSession } from "../src/state.js";

function task(n: number): Task {
  return {
    image_id: `img${n}`,
    concept: `concept${n}`,
    image_url: `/images/img${n}`,
    remaining: 5 - n,
  };
}

class FakeApi implements AnnotationApi {
  submissions: Submission[] = [];
  tasks: (Task | null)[];
  failNext: Error | null = null;
  submitDelayMs = 0;
  agreementStats: AgreementStats = { n_pairs: 2, agreement: 0.5 };

  constructor(tasks: (Task | null)[]) {
    this.tasks = [...tasks];
  }

  async nextTask(): Promise<Task | null> {
    const next = this.tasks.shift();
    return next === undefined ? null : next;
  }

  async submitLabel(submission: Submission): Promise<void> {
    if (this.failNext) {
      const error = this.failNext;
      this.failNext = null;
      throw error;
    }
    if (this.submitDelayMs) {
      await new Promise((resolve) => setTimeout(resolve, this.submitDelayMs));
    }
    this.submissions.push(submission);
  }

  async agreement(): Promise<AgreementStats> {
    return this.agreementStats;
  }

  async guidelines(): Promise<string> {
    return "guideline one\nguideline two\nguideline three";
  }

  imageUrl(t: Task): string {
    return `http://api${t.image_url}`;
  }
}

async function started(tasks: (Task | null)[]): Promise<[AnnotationSession, FakeApi]> {
  const api = new FakeApi(tasks);
  const session = new AnnotationSession(api, "annie");
  await session.start();
  return [session, api];
}

describe("submit enablement", () => {
  it("is disabled until a label is selected", async () => {
    const [session] = await started([task(1)]);
    expect(session.view.canSubmit).toBe(false);
    session.toggleFlag("graphic");
    expect(session.view.canSubmit).toBe(false); // flags alone never enable
    session.selectLabel("metonymic");
    expect(session.view.canSubmit).toBe(true);
  });

  it("ignores submit without a label", async () => {
    const [session, api] = await started([task(1)]);
    await session.submit();
    expect(api.submissions).toHaveLength(0);
  });

  it("flags are submittable with either label", async () => {
    for (const label of ["metonymic", "non-metonymic"] as const) {
      const [session, api] = await started([task(1)]);
      session.toggleFlag("bias");
      session.selectLabel(label);
      await session.submit();
      expect(api.submissions[0]).toEqual({
        image_id: "img1",
        label,
        flags: ["bias"],
      });
    }
  });
});

describe("submit flow", () => {
  it("advances to the next task and resets the selection", async () => {
    const [session, api] = await started([task(1), task(2)]);
    session.selectLabel("metonymic");
    session.toggleFlag("graphic");
    await session.submit();
    expect(api.submissions).toHaveLength(1);
    const view = session.view;
    expect(view.screen.kind).toBe("task");
    if (view.screen.kind === "task") expect(view.screen.task.image_id).toBe("img2");
    expect(view.selectedLabel).toBeNull();
    expect(view.selectedFlags).toEqual([]);
    expect(view.labeledThisSession).toBe(1);
  });

  it("debounces a double-click into one POST", async () => {
    const [session, api] = await started([task(1), task(2)]);
    api.submitDelayMs = 20;
    session.selectLabel("metonymic");
    await Promise.all([session.submit(), session.submit()]);
    expect(api.submissions).toHaveLength(1);
  });

  it("keeps the selection and shows a toast on a 400", async () => {
    const [session, api] = await started([task(1)]);
    session.selectLabel("metonymic");
    session.toggleFlag("bias");
    api.failNext = new ApiError(400, "label invalid");
    await session.submit();
    const view = session.view;
    expect(view.errorToast).toBe("label invalid");
    expect(view.selectedLabel).toBe("metonymic");
    expect(view.selectedFlags).toEqual(["bias"]);
    expect(view.screen.kind).toBe("task");
    expect(api.submissions).toHaveLength(0);
    // correction succeeds afterward
    await session.submit();
    expect(api.submissions).toHaveLength(1);
    expect(session.view.errorToast).toBeNull();
  });

  it("keeps the selection and raises the retry banner when unreachable", async () => {
    const [session, api] = await started([task(1)]);
    session.selectLabel("non-metonymic");
    api.failNext = new NetworkError("connection refused");
    await session.submit();
    const view = session.view;
    expect(view.offline).toBe(true);
    expect(view.selectedLabel).toBe("non-metonymic");
    expect(api.submissions).toHaveLength(0);
  });
});

describe("completion", () => {
  it("shows the agreement stat when the queue is exhausted", async () => {
    const [session, api] = await started([task(1), null]);
    session.selectLabel("metonymic");
    await session.submit();
    const view = session.view;
    expect(view.screen.kind).toBe("done");
    if (view.screen.kind === "done") {
      expect(view.screen.agreement).toBe(0.5);
      expect(view.screen.nPairs).toBe(2);
    }
  });

  it("renders done immediately on an already-finished corpus", async () => {
    const [session] = await started([null]);
    expect(session.view.screen.kind).toBe("done");
  });
});

describe("state changes notify subscribers", () => {
  it("emits a view per transition", async () => {
    const api = new FakeApi([task(1), task(2)]);
    const session = new AnnotationSession(api, "annie");
    const kinds: string[] = [];
    session.subscribe((view) => kinds.push(`${view.screen.kind}:${view.canSubmit}`));
    await session.start();
    session.selectLabel("metonymic");
    await session.submit();
    expect(kinds[0]).toBe("task:false");
    expect(kinds).toContain("task:true");
    expect(kinds[kinds.length - 1]).toBe("task:false"); // next task, reset
  });
});
