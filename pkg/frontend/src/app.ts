/**
 * Console controller: session, role routing, view wiring, status polling.
 *
 * The console holds no authority: it only decides what to show. Every
 * permission decision happens server-side; a 401 anywhere drops the session
 * and returns to the login view.
 */

import { ApiError, RangeApi, Session } from "./api.js";
import { clear, el, mount } from "./dom.js";
import { builderView, renderServerFindings, setFieldError } from "./views/builder.js";
import { catalogList } from "./views/catalog.js";
import { dashboardView, renderInstanceState } from "./views/dashboard.js";
import { instanceTable } from "./views/instances.js";
import { LOGIN_FAILED_MESSAGE, loginView } from "./views/login.js";

export const POLL_INTERVAL_MS = 2000;
export const SESSION_EXPIRED_MESSAGE = "Session expired. Sign in again.";

export class ConsoleApp {
  private session: Session | null = null;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private root: HTMLElement,
    private api: RangeApi,
    private pollIntervalMs: number = POLL_INTERVAL_MS,
  ) {}

  start(): void {
    this.showLogin();
  }

  currentView(): string {
    return this.root.querySelector("[data-view]")?.getAttribute("data-view") ?? "";
  }

  // ------------------------------------------------------------------
  // Session
  // ------------------------------------------------------------------

  private showLogin(notice = ""): void {
    this.stopPolling();
    this.session = null;
    this.api.setToken(null);
    const view = loginView({ onSubmit: (u, p) => void this.handleLogin(u, p) }, notice);
    view.setAttribute("data-view", "login");
    mount(this.root, view);
  }

  private async handleLogin(username: string, password: string): Promise<void> {
    try {
      this.session = await this.api.login(username, password);
    } catch {
      const error = this.root.querySelector("#login-error");
      if (error) error.textContent = LOGIN_FAILED_MESSAGE;
      return;
    }
    if (this.session.role === "LEARNER") {
      await this.showCatalog();
    } else {
      await this.showInstructorHome();
    }
  }

  private handleUnauthorized(): void {
    this.showLogin(SESSION_EXPIRED_MESSAGE);
  }

  private async guard<T>(work: () => Promise<T>): Promise<T | null> {
    try {
      return await work();
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        this.handleUnauthorized();
        return null;
      }
      throw error;
    }
  }

  // ------------------------------------------------------------------
  // Learner catalog
  // ------------------------------------------------------------------

  private async showCatalog(): Promise<void> {
    this.stopPolling();
    const listing = await this.guard(() => this.api.listScenarios());
    if (!listing) return;
    const view = el(
      "main",
      { class: "view view-catalog" },
      el("h1", {}, "Scenario catalog"),
      catalogList(listing.scenarios, {
        onLaunch: (scenarioId) => void this.handleLaunch(scenarioId),
      }),
      el("div", { class: "form-error", id: "catalog-error" }, ""),
    );
    view.setAttribute("data-view", "catalog");
    mount(this.root, view);
  }

  private async handleLaunch(scenarioId: string): Promise<void> {
    try {
      const launched = await this.api.launchScenario(scenarioId);
      await this.showDashboard(launched.instance_id);
    } catch (error) {
      if (error instanceof ApiError && error.status === 401) {
        this.handleUnauthorized();
        return;
      }
      const slot = this.root.querySelector("#catalog-error");
      if (slot && error instanceof ApiError) slot.textContent = `${error.code}: ${error.message}`;
    }
  }

  // ------------------------------------------------------------------
  // Instructor home: builder + catalog management + instance review
  // ------------------------------------------------------------------

  private async showInstructorHome(): Promise<void> {
    this.stopPolling();
    const listing = await this.guard(() => this.api.listScenarios());
    if (!listing) return;
    const instances = await this.guard(() => this.api.listInstances());
    if (!instances) return;

    const form = builderView({ onCreate: (submission) => void this.handleCreate(submission) });
    const view = el(
      "main",
      { class: "view view-instructor" },
      el("h1", {}, "Scenario authoring"),
      form,
      el("h2", {}, "Scenarios"),
      catalogList(listing.scenarios, {
        onLaunch: (scenarioId) => void this.handleLaunch(scenarioId),
        onPublish: (scenarioId) => void this.handlePublish(scenarioId),
      }),
      el("h2", {}, "Instances"),
      instanceTable(instances.instances, {
        onOpen: (instanceId) => void this.showDashboard(instanceId),
      }),
    );
    view.setAttribute("data-view", "instructor");
    mount(this.root, view);
  }

  private async handleCreate(submission: { blueprintId: string; params: import("./api.js").BlueprintParams }): Promise<void> {
    const form = this.root.querySelector<HTMLElement>("#builder-form");
    try {
      await this.api.createBlueprintScenario(submission.blueprintId, submission.params);
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.status === 401) {
          this.handleUnauthorized();
          return;
        }
        if (form) {
          if (error.findings.length > 0) {
            renderServerFindings(form, error.findings, error.message);
          } else {
            setFieldError(form, fieldForError(error), `${error.code}: ${error.message}`);
          }
        }
        return;
      }
      throw error;
    }
    await this.showInstructorHome(); // catalog refresh
  }

  private async handlePublish(scenarioId: string): Promise<void> {
    const done = await this.guard(() => this.api.publishScenario(scenarioId));
    if (done) await this.showInstructorHome();
  }

  // ------------------------------------------------------------------
  // Instance dashboard with 2s polling
  // ------------------------------------------------------------------

  async showDashboard(instanceId: string): Promise<void> {
    this.stopPolling();
    const view = dashboardView(instanceId, {
      onTerminate: (id) => void this.handleTerminate(id),
      onBack: () => void (this.session?.role === "LEARNER" ? this.showCatalog() : this.showInstructorHome()),
    });
    view.setAttribute("data-view", "dashboard");
    mount(this.root, view);
    await this.pollOnce(instanceId);
    this.pollTimer = setInterval(() => void this.pollOnce(instanceId), this.pollIntervalMs);
  }

  private async pollOnce(instanceId: string): Promise<void> {
    const card = await this.guard(() => this.api.instanceStatus(instanceId));
    if (!card) return;
    const view = this.root.querySelector<HTMLElement>(".view-dashboard");
    if (!view) {
      this.stopPolling();
      return;
    }
    renderInstanceState(view, card);
    if (card.state === "TERMINATED") {
      this.stopPolling();
    }
  }

  private async handleTerminate(instanceId: string): Promise<void> {
    const done = await this.guard(() => this.api.terminateInstance(instanceId));
    if (done) await this.pollOnce(instanceId);
  }

  private stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  stop(): void {
    this.stopPolling();
    clear(this.root);
  }
}

function fieldForError(error: ApiError): string {
  const message = error.message;
  if (message.includes("sta_count")) return "sta-count";
  if (message.includes("passphrase")) return "passphrase";
  if (message.includes("ssid") || message.includes("SSID")) return "ssid";
  return "form";
}
