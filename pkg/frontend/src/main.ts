import { createApp } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const params = new URLSearchParams(location.search);
const app = createApp(root, { hub: params.get("hub") ?? undefined });
app.start();
