import { el } from "../dom.js";

/** Single generic failure message: no hint whether the user exists. */
export const LOGIN_FAILED_MESSAGE = "Login failed. Check your credentials.";

export interface LoginHandlers {
  onSubmit: (username: string, password: string) => void;
}

export function loginView(handlers: LoginHandlers, notice = ""): HTMLElement {
  const error = el("div", { class: "form-error", id: "login-error" }, notice);
  const username = el("input", { id: "login-username", name: "username", autocomplete: "username" });
  const password = el("input", {
    id: "login-password",
    name: "password",
    type: "password",
    autocomplete: "current-password",
  });
  const form = el(
    "form",
    { id: "login-form" },
    el("h1", {}, "Wi-Fi Range Console"),
    el("label", { for: "login-username" }, "Username"),
    username,
    el("label", { for: "login-password" }, "Password"),
    password,
    el("button", { type: "submit", id: "login-submit" }, "Sign in"),
    error,
  );
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    handlers.onSubmit(username.value, password.value);
  });
  return el("main", { class: "view view-login" }, form);
}

export function showLoginError(root: HTMLElement): void {
  const error = root.querySelector("#login-error");
  if (error) error.textContent = LOGIN_FAILED_MESSAGE;
}
