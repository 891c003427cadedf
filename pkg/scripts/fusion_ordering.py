import argparse
import logging
import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.config_validator import ConfigError, GeneratorConfig, load_run_config
from utils.data import Sample, synth_utterance
from utils.model import VARIANTS, SpeechAct
from utils.prosody import oracle_accuracies
from utils.seeding import derive_seed
from utils.trainer import fusion_ordering

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEFAULT_CONFIG = os.path.join(ROOT, "configs", "acceptance.conf")
NOISE_LEVELS = [0.0, 0.1, 0.2, 0.3]


def trained_ordering(config_path: str, n_seeds: int) -> int:
    cfg = load_run_config(config_path)
    seeds = [cfg.seed + i for i in range(n_seeds)]
    report = fusion_ordering(cfg, seeds)

    print(f"{'seed':>5} " + " ".join(f"{name:>15}" for name in VARIANTS))
    for seed in report.seeds:
        scores = {r.variant: r.macro_f1 for r in report.runs if r.seed == seed}
        print(f"{seed:>5} " + " ".join(f"{scores[name]:>15.4f}" for name in VARIANTS))
    print(f"{'mean':>5} " + " ".join(f"{report.mean_f1(name):>15.4f}" for name in VARIANTS))

    failures = report.failures()
    for problem in failures:
        print(f"FAIL {problem}")
    print("ordering holds" if not failures else "ordering does not hold")
    return 0 if not failures else 1


def oracle_run(seed: int, noise: float, count: int) -> dict:
    cfg = GeneratorConfig(seed=seed, marker_noise=noise, contour_noise=noise)
    samples = []
    for i in range(count):
        act = SpeechAct(i % 3)
        u = synth_utterance(act, cfg, derive_seed(seed, "fusion_ordering", i))
        samples.append(Sample(record_id=str(i), waveform=u.waveform, bengali=u.bengali, english=u.english, label=int(act)))
    return oracle_accuracies(samples)


def oracle_table(n_seeds: int, count: int) -> int:
    print(f"{'noise':>6} {'seed':>5} {'audio':>7} {'text':>7} {'bimodal':>8} {'ordered':>8}")
    for noise in NOISE_LEVELS:
        for seed in range(n_seeds):
            acc = oracle_run(seed, noise, count)
            ordered = acc["audio"] < acc["bimodal"] and acc["text"] < acc["bimodal"]
            print(
                f"{noise:>6.2f} {seed:>5} {acc['audio']:>7.3f} {acc['text']:>7.3f} {acc['bimodal']:>8.3f} "
                f"{'yes' if ordered else 'no':>8}"
            )
    return 0


def main():
    parser = argparse.ArgumentParser(description="Train every variant over several seeds and check that fusion helps.")
    parser.add_argument("--config", default=DEFAULT_CONFIG)
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--oracle", action="store_true", help="Score the hand-written oracles instead of training")
    parser.add_argument("--count", type=int, default=300, help="Utterances per oracle cell")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="[%(asctime)s] [%(levelname)s] - %(message)s")
    if args.oracle:
        sys.exit(oracle_table(args.seeds, args.count))
    try:
        sys.exit(trained_ordering(args.config, args.seeds))
    except ConfigError:
        sys.exit(1)


if __name__ == "__main__":
    main()
