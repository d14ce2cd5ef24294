/** Bootstrap: configuration comes from URL params or a minimal settings
 * form (?api=<base-url>&token=<annotator-token>). */

import { ApiClient } from "./api.js";
import { App } from "./app.js";
import { AnnotationSession } from "./state.js";

function settingsForm(root: HTMLElement): void {
  root.innerHTML = `
    <form class="settings">
      <h2>Annotation settings</h2>
      <label>API base URL <input type="text" name="api" value="${location.origin}"></label>
      <label>Annotator token <input type="text" name="token" placeholder="your annotator id"></label>
      <button type="submit">Start</button>
    </form>`;
  root.querySelector("form")!.addEventListener("submit", (event) => {
    event.preventDefault();
    const data = new FormData(event.target as HTMLFormElement);
    const params = new URLSearchParams({
      api: String(data.get("api") ?? ""),
      token: String(data.get("token") ?? ""),
    });
    location.search = params.toString();
  });
}

export function boot(root: HTMLElement): void {
  const params = new URLSearchParams(location.search);
  const apiBase = params.get("api") ?? location.origin;
  const token = params.get("token");
  if (!token) {
    settingsForm(root);
    return;
  }
  const api = new ApiClient(apiBase, token);
  const app = new App(root, api, new AnnotationSession(api, token));
  void app.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot(document.getElementById("app")!);
}
