import { RangeApi } from "./api.js";
import { ConsoleApp } from "./app.js";

const root = document.querySelector<HTMLElement>("#app");
if (root) {
  new ConsoleApp(root, new RangeApi()).start();
}
