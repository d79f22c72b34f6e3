import { BlueprintParams, Finding } from "../api.js";
import { el } from "../dom.js";

export const BLUEPRINTS = ["SOHO_PSK", "MULTI_BSS", "ENTERPRISE_EAP"] as const;
export const STA_COUNT_MIN = 1;
export const STA_COUNT_MAX = 32;

export interface BuilderSubmission {
  blueprintId: string;
  params: BlueprintParams;
}

export interface BuilderHandlers {
  onCreate: (submission: BuilderSubmission) => void;
}

/** Map a server finding (or parameter error) onto the offending field. */
export function fieldForFinding(finding: Pick<Finding, "message" | "location">): string {
  const haystack = `${finding.location} ${finding.message}`;
  if (haystack.includes("sta_count")) return "sta-count";
  if (haystack.includes("passphrase")) return "passphrase";
  if (haystack.includes("ssid")) return "ssid";
  return "form";
}

export function builderView(handlers: BuilderHandlers): HTMLElement {
  const blueprint = el("select", { id: "builder-blueprint", name: "blueprint_id" });
  for (const id of BLUEPRINTS) {
    blueprint.append(el("option", { value: id }, id));
  }
  const staCount = el("input", { id: "builder-sta-count", name: "sta_count", type: "number", value: "1" });
  const ssid = el("input", { id: "builder-ssid", name: "ssid", value: "" });
  const passphrase = el("input", { id: "builder-passphrase", name: "passphrase", type: "password" });

  const fieldError = (id: string) => el("div", { class: "field-error", id: `error-${id}` });
  const formError = el("div", { class: "form-error", id: "error-form" });

  const passphraseRow = el(
    "div",
    { class: "field", id: "row-passphrase" },
    el("label", { for: "builder-passphrase" }, "Passphrase"),
    passphrase,
    fieldError("passphrase"),
  );
  blueprint.addEventListener("change", () => {
    // EAP scenarios authenticate with certificates, not a passphrase.
    passphraseRow.classList.toggle("hidden", blueprint.value === "ENTERPRISE_EAP");
  });

  const form = el(
    "form",
    { id: "builder-form" },
    el("h2", {}, "New scenario from blueprint"),
    el("div", { class: "field" }, el("label", { for: "builder-blueprint" }, "Blueprint"), blueprint),
    el(
      "div",
      { class: "field" },
      el("label", { for: "builder-sta-count" }, "Stations"),
      staCount,
      fieldError("sta-count"),
    ),
    el("div", { class: "field" }, el("label", { for: "builder-ssid" }, "SSID"), ssid, fieldError("ssid")),
    passphraseRow,
    el("button", { type: "submit", id: "builder-submit" }, "Create scenario"),
    formError,
  );

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    clearBuilderErrors(form);
    const count = Number(staCount.value);
    if (!Number.isInteger(count) || count < STA_COUNT_MIN || count > STA_COUNT_MAX) {
      setFieldError(form, "sta-count", `Stations must be between ${STA_COUNT_MIN} and ${STA_COUNT_MAX}.`);
      return;
    }
    const params: BlueprintParams = { sta_count: count, ssid: ssid.value };
    if (blueprint.value !== "ENTERPRISE_EAP") {
      params.passphrase = passphrase.value;
    }
    handlers.onCreate({ blueprintId: blueprint.value, params });
  });

  return form;
}

export function clearBuilderErrors(form: HTMLElement): void {
  for (const node of form.querySelectorAll(".field-error, .form-error")) {
    node.textContent = "";
  }
}

export function setFieldError(form: HTMLElement, field: string, message: string): void {
  const slot = form.querySelector(`#error-${field}`) ?? form.querySelector("#error-form");
  if (slot) slot.textContent = message;
}

export function renderServerFindings(form: HTMLElement, findings: Finding[], fallback: string): void {
  clearBuilderErrors(form);
  if (findings.length === 0) {
    setFieldError(form, "form", fallback);
    return;
  }
  for (const finding of findings) {
    setFieldError(form, fieldForFinding(finding), `${finding.code}: ${finding.message}`);
  }
}
