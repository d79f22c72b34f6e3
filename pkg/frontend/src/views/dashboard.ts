import { InstanceCard, InstanceState } from "../api.js";
import { el } from "../dom.js";

/** Forward progression rendered as a stepper; FAILED/TEARING_DOWN shown as status. */
export const PROGRESSION: InstanceState[] = ["PENDING", "DEPLOYING", "VERIFYING", "RUNNING"];

export interface DashboardHandlers {
  onTerminate: (instanceId: string) => void;
  onBack: () => void;
}

export function dashboardView(instanceId: string, handlers: DashboardHandlers): HTMLElement {
  const steps = el("ol", { class: "progression", id: "progression" });
  for (const state of PROGRESSION) {
    steps.append(el("li", { class: "step", "data-state": state }, state));
  }
  const status = el("p", { class: "status-line", id: "status-line" }, "…");
  const checks = el("ul", { class: "checks", id: "verification-checks" });
  const terminate = el("button", { id: "terminate", class: "danger" }, "Terminate");
  terminate.addEventListener("click", () => handlers.onTerminate(instanceId));
  const back = el("button", { id: "back-to-catalog", class: "secondary" }, "Back");
  back.addEventListener("click", () => handlers.onBack());

  return el(
    "section",
    { class: "view view-dashboard", "data-instance-id": instanceId },
    el("h2", {}, `Instance ${instanceId}`),
    steps,
    status,
    el("h3", {}, "Verification"),
    checks,
    el("div", { class: "actions" }, terminate, back),
  );
}

export function renderInstanceState(view: HTMLElement, card: InstanceCard): void {
  const reached = PROGRESSION.indexOf(card.state as (typeof PROGRESSION)[number]);
  view.querySelectorAll<HTMLElement>(".step").forEach((step, index) => {
    const passedMark = reached >= 0 ? index <= reached : step.dataset.state !== undefined && ["TEARING_DOWN", "TERMINATED"].includes(card.state);
    step.classList.toggle("reached", Boolean(passedMark));
    step.classList.toggle("current", step.dataset.state === card.state);
  });

  const statusLine = view.querySelector<HTMLElement>("#status-line");
  if (statusLine) {
    statusLine.textContent = `State: ${card.state}`;
    statusLine.dataset.state = card.state;
  }

  const list = view.querySelector<HTMLElement>("#verification-checks");
  if (list) {
    while (list.firstChild) list.removeChild(list.firstChild);
    if (card.verification === null) {
      list.append(el("li", { class: "muted" }, "No verification report yet."));
    } else {
      for (const check of card.verification.checks) {
        const item = el(
          "li",
          { class: check.pass ? "check pass" : "check fail" },
          `${check.pass ? "PASS" : "FAIL"} ${check.kind} ${check.subject[0]} -> ${check.subject[1]}: ${check.detail}`,
        );
        list.append(item);
      }
      list.append(
        el(
          "li",
          { class: card.verification.overall ? "overall pass" : "overall fail", id: "verification-overall" },
          card.verification.overall ? "All checks passed" : "Verification FAILED",
        ),
      );
    }
  }

  const terminate = view.querySelector<HTMLButtonElement>("#terminate");
  if (terminate) {
    terminate.disabled = card.state === "TERMINATED" || card.state === "TEARING_DOWN";
  }
}
