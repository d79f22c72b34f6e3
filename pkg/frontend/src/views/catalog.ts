import { CatalogItem } from "../api.js";
import { el } from "../dom.js";

export interface CatalogHandlers {
  onLaunch: (scenarioId: string) => void;
  onPublish?: (scenarioId: string) => void;
}

export function catalogList(items: CatalogItem[], handlers: CatalogHandlers): HTMLElement {
  const list = el("div", { class: "catalog", id: "catalog" });
  if (items.length === 0) {
    list.append(el("p", { class: "empty" }, "No scenarios available yet."));
    return list;
  }
  for (const item of items) {
    const card = el(
      "div",
      { class: "card scenario-card", "data-scenario-id": item.scenario_id },
      el("h3", {}, item.name),
      el("p", { class: "muted" }, item.description),
      el("p", { class: "meta" }, `v${item.latest_version} · ${item.visibility}`),
    );
    const launch = el("button", { class: "launch", "data-scenario-id": item.scenario_id }, "Launch");
    launch.addEventListener("click", () => handlers.onLaunch(item.scenario_id));
    card.append(launch);
    if (handlers.onPublish && item.visibility === "DRAFT") {
      const publish = el("button", { class: "publish", "data-scenario-id": item.scenario_id }, "Publish");
      publish.addEventListener("click", () => handlers.onPublish!(item.scenario_id));
      card.append(publish);
    }
    list.append(card);
  }
  return list;
}
