/** Session state machine for the annotation screen.
 *
 * All labeling logic lives on the server; this layer only tracks the
 * current task, the in-progress selection, and submit enablement. The
 * invariants it owns: submit stays disabled until a label is chosen,
 * one user submit action produces at most one POST (in-flight guard),
 * and a failed submit never loses the selection.
 */

import { AnnotationApi, ApiError, Flag, Label, NetworkError, Task } from "./api.js";

export type Screen =
  | { kind: "loading" }
  | { kind: "task"; task: Task }
  | { kind: "done"; agreement: number | null; nPairs: number }
  | { kind: "fatal"; message: string };

export interface SessionView {
  screen: Screen;
  guidelines: string;
  selectedLabel: Label | null;
  selectedFlags: Flag[];
  submitting: boolean;
  /** Server rejected the submission (e.g. 400): shown as a toast. */
  errorToast: string | null;
  /** API unreachable: shown as a retry banner; selection is kept. */
  offline: boolean;
  labeledThisSession: number;
  canSubmit: boolean;
}

type Listener = (view: SessionView) => void;

export class AnnotationSession {
  private screen: Screen = { kind: "loading" };
  private guidelines = "";
  private selectedLabel: Label | null = null;
  private flags = new Set<Flag>();
  private submitting = false;
  private errorToast: string | null = null;
  private offline = false;
  private labeled = 0;
  private listeners: Listener[] = [];

  constructor(
    private api: AnnotationApi,
    readonly annotator: string,
  ) {}

  // -- view ------------------------------------------------------------

  get view(): SessionView {
    return {
      screen: this.screen,
      guidelines: this.guidelines,
      selectedLabel: this.selectedLabel,
      selectedFlags: [...this.flags].sort(),
      submitting: this.submitting,
      errorToast: this.errorToast,
      offline: this.offline,
      labeledThisSession: this.labeled,
      canSubmit:
        this.screen.kind === "task" && this.selectedLabel !== null && !this.submitting,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    const view = this.view;
    for (const listener of this.listeners) listener(view);
  }

  // -- lifecycle ----------------------------------------------------------

  async start(): Promise<void> {
    try {
      this.guidelines = await this.api.guidelines();
      await this.loadNext();
    } catch (error) {
      this.handleTransport(error);
    }
    this.notify();
  }

  /** Re-run the last failed fetch after the retry banner. */
  async retry(): Promise<void> {
    this.offline = false;
    this.notify();
    try {
      if (!this.guidelines) this.guidelines = await this.api.guidelines();
      if (this.screen.kind === "loading" || this.screen.kind === "fatal") {
        await this.loadNext();
      }
    } catch (error) {
      this.handleTransport(error);
    }
    this.notify();
  }

  private async loadNext(): Promise<void> {
    const task = await this.api.nextTask(this.annotator);
    if (task === null) {
      let agreement: number | null = null;
      let nPairs = 0;
      try {
        const stats = await this.api.agreement();
        agreement = stats.agreement;
        nPairs = stats.n_pairs;
      } catch {
        /* completion screen still renders without the stat */
      }
      this.screen = { kind: "done", agreement, nPairs };
    } else {
      this.screen = { kind: "task", task };
    }
    this.selectedLabel = null;
    this.flags.clear();
  }

  // -- selection -------------------------------------------------------------

  selectLabel(label: Label): void {
    if (this.screen.kind !== "task") return;
    this.selectedLabel = label;
    this.errorToast = null;
    this.notify();
  }

  toggleFlag(flag: Flag): void {
    if (this.screen.kind !== "task") return;
    if (this.flags.has(flag)) this.flags.delete(flag);
    else this.flags.add(flag);
    this.notify();
  }

  // -- submit ------------------------------------------------------------------

  /** POST the selection, then advance. Repeat calls while a POST is in
   * flight are ignored, so a double-click stores exactly one record. */
  async submit(): Promise<void> {
    if (this.screen.kind !== "task" || this.selectedLabel === null || this.submitting) {
      return;
    }
    const task = this.screen.task;
    this.submitting = true;
    this.errorToast = null;
    this.notify();
    try {
      await this.api.submitLabel({
        image_id: task.image_id,
        label: this.selectedLabel,
        flags: [...this.flags].sort(),
      });
      this.labeled += 1;
      this.offline = false;
      await this.loadNext();
    } catch (error) {
      if (error instanceof ApiError) {
        // selection preserved for correction
        this.errorToast = error.detail;
      } else {
        this.handleTransport(error);
      }
    } finally {
      this.submitting = false;
      this.notify();
    }
  }

  private handleTransport(error: unknown): void {
    if (error instanceof NetworkError) {
      this.offline = true;
    } else {
      this.screen = { kind: "fatal", message: String(error) };
    }
  }
}
