import { InstanceCard } from "../api.js";
import { el } from "../dom.js";

export interface InstanceListHandlers {
  onOpen: (instanceId: string) => void;
}

export function instanceTable(rows: InstanceCard[], handlers: InstanceListHandlers): HTMLElement {
  const table = el("table", { class: "instances", id: "instances" });
  table.append(
    el(
      "tr",
      {},
      el("th", {}, "Instance"),
      el("th", {}, "Scenario"),
      el("th", {}, "Owner"),
      el("th", {}, "State"),
      el("th", {}, ""),
    ),
  );
  for (const row of rows) {
    const open = el("button", { class: "open", "data-instance-id": row.instance_id }, "View");
    open.addEventListener("click", () => handlers.onOpen(row.instance_id));
    table.append(
      el(
        "tr",
        { "data-instance-id": row.instance_id },
        el("td", { class: "mono" }, row.instance_id.slice(0, 12)),
        el("td", {}, `${row.scenario_id} v${row.version}`),
        el("td", {}, row.owner),
        el("td", { class: `state state-${row.state.toLowerCase()}` }, row.state),
        el("td", {}, open),
      ),
    );
  }
  if (rows.length === 0) {
    table.append(el("tr", {}, el("td", { colspan: "5", class: "empty" }, "No instances.")));
  }
  return table;
}
