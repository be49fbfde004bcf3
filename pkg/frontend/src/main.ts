import { DesignApi } from "./api.js";
import { StudioState } from "./state.js";
import { Wizard } from "./wizard.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://localhost:8000";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const wizard = new Wizard(root, new StudioState(), new DesignApi(baseUrl));
wizard.render();
