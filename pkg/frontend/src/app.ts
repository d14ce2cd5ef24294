/** DOM rendering and keyboard wiring over the session state machine.
 *
 * Shortcuts: M = metonymic, N = non-metonymic, G = graphic flag,
 * B = bias flag, Enter = submit.
 */

import { AnnotationApi, Flag, Label } from "./api.js";
import { AnnotationSession, SessionView } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) node.append(child);
  return node;
}

export class App {
  constructor(
    private root: HTMLElement,
    private api: AnnotationApi,
    private session: AnnotationSession,
  ) {
    session.subscribe((view) => this.render(view));
    document.addEventListener("keydown", (event) => this.onKey(event));
  }

  async start(): Promise<void> {
    await this.session.start();
  }

  private onKey(event: KeyboardEvent): void {
    if (event.target instanceof HTMLInputElement && event.target.type === "text") return;
    switch (event.key.toLowerCase()) {
      case "m":
        this.session.selectLabel("metonymic");
        break;
      case "n":
        this.session.selectLabel("non-metonymic");
        break;
      case "g":
        this.session.toggleFlag("graphic");
        break;
      case "b":
        this.session.toggleFlag("bias");
        break;
      case "enter":
        void this.session.submit();
        break;
    }
  }

  private render(view: SessionView): void {
    this.root.replaceChildren();
    if (view.offline) {
      const banner = el("div", { class: "banner error" }, [
        "Annotation service unreachable. Your selection is kept. ",
      ]);
      const retry = el("button", { class: "retry" }, ["Retry"]);
      retry.addEventListener("click", () => void this.session.retry());
      banner.append(retry);
      this.root.append(banner);
    }
    if (view.errorToast) {
      this.root.append(el("div", { class: "banner toast" }, [`Rejected: ${view.errorToast}`]));
    }
    switch (view.screen.kind) {
      case "loading":
        this.root.append(el("p", { class: "status" }, ["Loading…"]));
        break;
      case "fatal":
        this.root.append(el("p", { class: "status error" }, [view.screen.message]));
        break;
      case "done":
        this.renderDone(view);
        break;
      case "task":
        this.renderTask(view);
        break;
    }
  }

  private renderDone(view: SessionView): void {
    const screen = view.screen as Extract<SessionView["screen"], { kind: "done" }>;
    const agreement =
      screen.agreement === null
        ? "no data yet"
        : `${(screen.agreement * 100).toFixed(1)}% over ${screen.nPairs} doubly-labeled images`;
    this.root.append(
      el("div", { class: "done" }, [
        el("h2", {}, ["All images labeled"]),
        el("p", {}, [`You labeled ${view.labeledThisSession} images this session.`]),
        el("p", {}, [`Raw agreement so far: ${agreement}.`]),
      ]),
    );
  }

  private renderTask(view: SessionView): void {
    const screen = view.screen as Extract<SessionView["screen"], { kind: "task" }>;
    const task = screen.task;

    const guidelines = el("aside", { class: "guidelines" });
    for (const line of view.guidelines.split("\n")) {
      if (line.trim()) guidelines.append(el("p", {}, [line]));
    }

    const image = el("img", {
      src: this.api.imageUrl(task),
      alt: `candidate metonymic image for ${task.concept}`,
      class: "task-image",
    });

    const labelButton = (label: Label, caption: string) => {
      const button = el(
        "button",
        {
          class: `label ${view.selectedLabel === label ? "selected" : ""}`,
          "data-label": label,
        },
        [caption],
      );
      button.addEventListener("click", () => this.session.selectLabel(label));
      return button;
    };

    const flagBox = (flag: Flag, caption: string) => {
      const input = el("input", { type: "checkbox", id: `flag-${flag}` }) as HTMLInputElement;
      input.checked = view.selectedFlags.includes(flag);
      input.addEventListener("change", () => this.session.toggleFlag(flag));
      return el("label", { class: "flag", for: `flag-${flag}` }, [input, ` ${caption}`]);
    };

    const submit = el("button", { class: "submit", "data-action": "submit" }, [
      view.submitting ? "Submitting…" : "Submit (Enter)",
    ]) as HTMLButtonElement;
    submit.disabled = !view.canSubmit;
    submit.addEventListener("click", () => void this.session.submit());

    this.root.append(
      el("div", { class: "task" }, [
        el("header", {}, [
          el("h2", { class: "concept" }, [task.concept]),
          el("span", { class: "progress" }, [
            `${view.labeledThisSession} labeled · ${task.remaining} remaining`,
          ]),
        ]),
        image,
        el("div", { class: "controls" }, [
          labelButton("metonymic", "Metonymic (M)"),
          labelButton("non-metonymic", "Non-metonymic (N)"),
          flagBox("graphic", "graphic (G)"),
          flagBox("bias", "bias (B)"),
          submit,
        ]),
        guidelines,
      ]),
    );
  }
}
