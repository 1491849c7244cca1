import { StudioApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const serverUrl = params.get("server") ?? window.location.origin;
const manualTicks = params.get("manualTicks") === "1";

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

const app = new StudioApp(root, { serverUrl, manualTicks });
app.mount();

const sessionId = params.get("session");
if (sessionId) {
  app.attachSession(sessionId).catch((error) => app.setStatus(String(error)));
}
