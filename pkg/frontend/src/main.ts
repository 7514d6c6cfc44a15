// Bootstrap: query parameters pick the service, pair set, and subject.
//   index.html?service=http://127.0.0.1:8765&pair_set=default&subject=s01

import { StudyApi } from "./api.js";
import { SessionRunner } from "./session.js";
import { StudyPage } from "./ui.js";

function localStore() {
  return {
    get: (key: string) => window.localStorage.getItem(key),
    set: (key: string, value: string) => window.localStorage.setItem(key, value),
  };
}

const params = new URLSearchParams(window.location.search);
const service = params.get("service") ?? "http://127.0.0.1:8765";
const pairSet = params.get("pair_set") ?? "default";
const subject = params.get("subject") ?? "anonymous";

const api = new StudyApi(service);
const page = StudyPage.mount(api, new SessionRunner(api, localStore()));
page.bind();
void page.start(pairSet, subject);
