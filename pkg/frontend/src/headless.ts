/**
 * Headless driver: runs the same session flow as the browser UI against a
 * live service, answering from a scripted list, then prints the report JSON.
 *
 *   node dist/headless.js --base http://127.0.0.1:8008 --n 10
 *   node dist/headless.js --base ... --session SESSION_ID --answers original_clean,corrected,...
 *
 * Without --answers the driver alternates choices. It is as blind as the
 * browser UI: it sees item ids only and never requests truth labels.
 */

import { Answer, ApiClient } from "./api.js";
import { answerAndAdvance, currentItem, fetchReport, isComplete, resumeFlow, startFlow } from "./flow.js";

interface Args {
  base: string;
  n: number;
  session?: string;
  answers?: Answer[];
  seed?: number;
  token?: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { base: "http://127.0.0.1:8008", n: 10 };
  for (let i = 0; i < argv.length; i += 1) {
    const key = argv[i];
    const value = argv[i + 1];
    switch (key) {
      case "--base":
        args.base = value;
        i += 1;
        break;
      case "--n":
        args.n = Number(value);
        i += 1;
        break;
      case "--session":
        args.session = value;
        i += 1;
        break;
      case "--seed":
        args.seed = Number(value);
        i += 1;
        break;
      case "--token":
        args.token = value;
        i += 1;
        break;
      case "--answers":
        args.answers = value.split(",").map((raw) => {
          const answer = raw.trim();
          if (answer !== "original_clean" && answer !== "corrected") {
            throw new Error(`invalid answer ${answer}`);
          }
          return answer;
        });
        i += 1;
        break;
      default:
        throw new Error(`unknown argument ${key}`);
    }
  }
  return args;
}

async function run(): Promise<void> {
  const proc = (globalThis as { process?: { argv: string[]; exit(code: number): void } }).process;
  if (!proc) throw new Error("headless driver requires node");
  const args = parseArgs(proc.argv.slice(2));
  const api = new ApiClient(args.base, args.token);

  let view = args.session
    ? await resumeFlow(api, args.session)
    : await startFlow(api, args.n, args.seed);

  let step = 0;
  while (!isComplete(view)) {
    const scripted = args.answers?.[step];
    const choice: Answer = scripted ?? (step % 2 === 0 ? "original_clean" : "corrected");
    const itemId = currentItem(view);
    view = await answerAndAdvance(api, view, choice);
    step += 1;
    if (itemId === currentItem(view)) throw new Error("flow did not advance");
  }

  const report = await fetchReport(api, view);
  console.log(JSON.stringify({ session_id: view.sessionId, answered: step, report }, null, 2));
}

run().catch((error) => {
  console.error(String(error));
  (globalThis as { process?: { exit(code: number): void } }).process?.exit(1);
});
