import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Tuple

from pycrowdsimpy.errors import CrowdSimError, ExportError, InvalidConfig
from pycrowdsimpy.GeoLearn import learn_locations, observations_from_events, write_efficiency_pairs
from pycrowdsimpy.Harness import (Simulator, export_results, load_events, write_hypothesis_report,
                                  write_sweep_summary)
from pycrowdsimpy.modules import get_logger, kv, load_settings
from pycrowdsimpy.SimConfigure import GeoLearnConfig, ScenarioConfig

logger = get_logger('Cli')


def _values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError('カンマ区切りの数値を指定してください: {t}'.format(t=text)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pycrowdsim', description='モバイルクラウドソーシングのシミュレーター')
    parser.add_argument('--settings', default=None, help='設定ファイル (INI)')
    parser.add_argument('--log-level', default=None, help='ログレベル (DEBUG / INFO / WARNING ...)')
    commands = parser.add_subparsers(dest='command')
    commands.required = True

    run = commands.add_parser('run', help='シナリオを1回実行する')
    run.add_argument('--config', default=None, help='シナリオ設定 (JSON)')
    run.add_argument('--out', default=None, help='出力ディレクトリ')

    sweep = commands.add_parser('sweep', help='実験軸に沿ってスイープする')
    sweep.add_argument('--config', default=None)
    sweep.add_argument('--axis', required=True, help='AnswersPerQuestion / QuestionsPerWorker / SpammerRatio')
    sweep.add_argument('--values', required=True, type=_values, help='例: 1,3,5,7')
    sweep.add_argument('--reps', type=int, default=1)
    sweep.add_argument('--target', type=float, default=0.9, help='目標正解率')
    sweep.add_argument('--workers', type=int, default=1, help='並列プロセス数')
    sweep.add_argument('--out', default=None)

    hypotheses = commands.add_parser('hypotheses', help='3つの仮説の比較実験')
    hypotheses.add_argument('--config', default=None)
    hypotheses.add_argument('--seeds', type=int, default=10)
    hypotheses.add_argument('--out', default=None)

    learn = commands.add_parser('learn-locations', help='結果ディレクトリから効率的な位置を学習する')
    learn.add_argument('--results', required=True, help='run の出力ディレクトリ')
    learn.add_argument('--k', type=int, default=None)
    learn.add_argument('--out', required=True, help='出力する CSV')
    return parser


def _simulator(args, settings) -> Simulator:
    if args.config:
        return Simulator(ScenarioConfig.from_json(args.config))
    return Simulator(settings=settings)


def _geolearn_config(results: str, settings) -> Tuple[GeoLearnConfig, int]:
    # 学習のシードは crowdsim.ini の Seed、無ければ結果を作った実行のシード
    seed = settings.seed if settings.seed is not None else 0
    path = os.path.join(results, 'manifest.json')
    try:
        with open(path, encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, ValueError):
        return GeoLearnConfig(), seed
    if not manifest.get('config'):
        return GeoLearnConfig(), seed
    config = ScenarioConfig.from_dict(manifest['config'])
    if settings.seed is None:
        seed = config.seed
    return config.geolearn, seed


def execute(args, settings) -> dict:
    out_dir = getattr(args, 'out', None) or settings.out_dir
    if args.command == 'run':
        simulator = _simulator(args, settings)
        manifest = export_results(simulator.run(), out_dir)
        return {'out': out_dir, 'fingerprint': manifest['fingerprint']}
    if args.command == 'sweep':
        simulator = _simulator(args, settings)
        result = simulator.sweep(args.axis, args.values, repetitions=args.reps, target_accuracy=args.target,
                                 max_workers=args.workers)
        os.makedirs(out_dir, exist_ok=True)
        write_sweep_summary(result, os.path.join(out_dir, 'summary.csv'))
        return {'out': out_dir, 'thresholds': result.thresholds}
    if args.command == 'hypotheses':
        simulator = _simulator(args, settings)
        report = simulator.hypotheses(args.seeds)
        write_hypothesis_report(report, out_dir)
        return {'out': out_dir, 'comparisons': len(report.comparisons)}
    if args.command == 'learn-locations':
        geolearn, seed = _geolearn_config(args.results, settings)
        events = load_events(args.results)
        pairs = learn_locations(observations_from_events(events), geolearn.seeds,
                                k=args.k if args.k is not None else geolearn.k,
                                min_samples=geolearn.min_samples, acc_threshold=geolearn.acc_threshold,
                                prs_threshold=geolearn.prs_threshold, max_iters=geolearn.max_iters,
                                tol=geolearn.tol, seed=seed)
        try:
            write_efficiency_pairs(pairs, args.out)
        except OSError as e:
            raise ExportError('効率判定を書き出せません: {path}'.format(path=args.out)) from e
        return {'out': args.out, 'pairs': len(pairs)}
    raise InvalidConfig('未知のコマンドです: {c}'.format(c=args.command))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_settings(args.settings)
    level = (args.log_level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s %(message)s')
    try:
        summary = execute(args, settings)
    except CrowdSimError as e:
        sys.stderr.write(json.dumps({'error': type(e).__name__, 'message': str(e)}, ensure_ascii=False) + '\n')
        return 2
    logger.info(kv('command_finished', command=args.command))
    sys.stdout.write(json.dumps(summary, ensure_ascii=False, sort_keys=True) + '\n')
    return 0


if __name__ == '__main__':
    sys.exit(main())
