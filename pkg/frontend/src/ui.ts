// DOM layer: side-by-side simultaneous display, forced choice via click or
// arrow keys, progress counter, break control, completion summary. The page
// never shows model names, scores, or which side holds the attacker's pick;
// raters see two images and nothing else. Images render at native resolution
// (no width/height constraints); zooming is left to the browser.

import { StudyApi } from "./api.js";
import { SessionRunner, SessionView } from "./session.js";

type Elements = {
  instructions: HTMLElement;
  study: HTMLElement;
  leftImage: HTMLImageElement;
  rightImage: HTMLImageElement;
  progress: HTMLElement;
  status: HTMLElement;
  retryButton: HTMLElement;
  breakOverlay: HTMLElement;
  completion: HTMLElement;
  summary: HTMLElement;
};

function element<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

export class StudyPage {
  private onBreak = false;
  private submitting = false;

  constructor(
    private api: StudyApi,
    private runner: SessionRunner,
    private elements: Elements,
  ) {}

  static mount(api: StudyApi, runner: SessionRunner): StudyPage {
    return new StudyPage(api, runner, {
      instructions: element("instructions"),
      study: element("study"),
      leftImage: element<HTMLImageElement>("left-image"),
      rightImage: element<HTMLImageElement>("right-image"),
      progress: element("progress"),
      status: element("status"),
      retryButton: element("retry-button"),
      breakOverlay: element("break-overlay"),
      completion: element("completion"),
      summary: element("summary"),
    });
  }

  bind(): void {
    this.elements.leftImage.addEventListener("click", () => this.choose("left"));
    this.elements.rightImage.addEventListener("click", () => this.choose("right"));
    document.addEventListener("keydown", (event) => {
      if (event.key === "ArrowLeft") this.choose("left");
      if (event.key === "ArrowRight") this.choose("right");
    });
    element("begin-button").addEventListener("click", () => {
      this.elements.instructions.hidden = true;
      this.elements.study.hidden = false;
    });
    element("break-button").addEventListener("click", () => this.toggleBreak());
    element("resume-button").addEventListener("click", () => this.toggleBreak());
    element("retry-button").addEventListener("click", () => {
      void this.runner.drain().then((view) => this.render(view));
    });
  }

  async start(pairSetId: string, subjectId: string): Promise<void> {
    try {
      const view = await this.runner.startOrResume(pairSetId, subjectId);
      this.render(view);
    } catch (error) {
      this.elements.status.textContent =
        `Cannot reach the study service (${String(error)}). ` +
        "Nothing is lost; use Retry once the connection is back.";
      this.elements.status.hidden = false;
    }
  }

  private async choose(side: "left" | "right"): Promise<void> {
    if (this.onBreak || this.submitting) return;
    const view = this.runner.view();
    if (view.done || view.current === null) return;
    this.submitting = true; // one recorded response per displayed pair
    try {
      this.render(await this.runner.submitChoice(side));
    } finally {
      this.submitting = false;
    }
  }

  private toggleBreak(): void {
    // blanks the images without ending the session
    this.onBreak = !this.onBreak;
    this.elements.breakOverlay.hidden = !this.onBreak;
    this.elements.leftImage.style.visibility = this.onBreak ? "hidden" : "visible";
    this.elements.rightImage.style.visibility = this.onBreak ? "hidden" : "visible";
  }

  render(view: SessionView): void {
    this.elements.progress.textContent = `${view.answered} / ${view.totalPairs}`;
    this.elements.status.hidden = view.connectivity === "online";
    this.elements.retryButton.hidden = view.connectivity === "online";
    if (view.connectivity === "retrying") {
      this.elements.status.textContent =
        "Connection lost; your last choice is saved locally and will be retried.";
    }
    if (view.done) {
      this.elements.study.hidden = true;
      this.elements.completion.hidden = false;
      this.elements.summary.textContent =
        `Thank you! You compared ${view.answered} image pairs in this session.`;
      return;
    }
    if (view.current) {
      this.elements.leftImage.src = this.api.imageUrl(view.current.left_image_url);
      this.elements.rightImage.src = this.api.imageUrl(view.current.right_image_url);
    }
  }
}
