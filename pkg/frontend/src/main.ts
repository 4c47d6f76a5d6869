import { ApiClient } from "./api.js";
import { mountApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "http://127.0.0.1:8000";

mountApp(document.getElementById("app")!, new ApiClient(baseUrl));
