import contextlib
import io
import json
import os
import tempfile
import unittest
from unittest import mock

from pycrowdsimpy.Cli import main
from pycrowdsimpy.GeoLearn import learn_locations
from tests import data


def _invoke(argv) -> tuple:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


class Test(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.config = os.path.join(self.tmp.name, 'scenario.json')
        with open(self.config, 'w', encoding='utf-8') as f:
            json.dump(data.small_scenario, f)

    def tearDown(self):
        self.tmp.cleanup()

    def test_run_and_learn_locations(self):
        out_dir = os.path.join(self.tmp.name, 'run')
        code, out, _ = _invoke(['run', '--config', self.config, '--out', out_dir])
        self.assertEqual(code, 0, msg='run が正常終了しない')
        summary = json.loads(out)
        self.assertEqual(summary['out'], out_dir, msg='出力ディレクトリが表示されない')
        self.assertTrue(os.path.exists(os.path.join(out_dir, 'manifest.json')), msg='マニフェストが書き出されない')

        pairs = os.path.join(self.tmp.name, 'pairs.csv')
        code, out, _ = _invoke(['learn-locations', '--results', out_dir, '--k', '2', '--out', pairs])
        self.assertEqual(code, 0, msg='learn-locations が正常終了しない')
        with open(pairs, encoding='utf-8') as f:
            lines = f.read().splitlines()
        self.assertEqual(len(lines), 1 + json.loads(out)['pairs'], msg='効率判定の行数が不正')

    def test_run_is_reproducible(self):
        outputs = []
        for name in ('first', 'second'):
            out_dir = os.path.join(self.tmp.name, name)
            code, _, _ = _invoke(['run', '--config', self.config, '--out', out_dir])
            self.assertEqual(code, 0, msg='run が正常終了しない')
            contents = {}
            for file_name in sorted(os.listdir(out_dir)):
                with open(os.path.join(out_dir, file_name), 'rb') as f:
                    contents[file_name] = f.read()
            outputs.append(contents)
        self.assertEqual(sorted(outputs[0]), sorted(outputs[1]), msg='2回の実行で出力ファイルの一覧が異なる')
        for file_name, content in outputs[0].items():
            self.assertEqual(content, outputs[1][file_name], msg='2回の実行で {f} の内容が異なる'.format(f=file_name))

    def test_learn_locations_uses_run_seed(self):
        out_dir = os.path.join(self.tmp.name, 'run')
        code, _, _ = _invoke(['run', '--config', self.config, '--out', out_dir])
        self.assertEqual(code, 0, msg='run が正常終了しない')

        pairs = os.path.join(self.tmp.name, 'pairs.csv')
        with mock.patch('pycrowdsimpy.Cli.learn_locations', wraps=learn_locations) as learn:
            code, _, _ = _invoke(['learn-locations', '--results', out_dir, '--out', pairs])
        self.assertEqual(code, 0, msg='learn-locations が正常終了しない')
        self.assertEqual(learn.call_args[1]['seed'], data.small_scenario['seed'],
                         msg='結果を作った実行のシードで学習していない')
        with open(pairs, 'rb') as f, open(os.path.join(out_dir, 'efficiency_pairs.csv'), 'rb') as g:
            self.assertEqual(f.read(), g.read(), msg='実行時と同じ効率判定にならない')

    def test_sweep(self):
        out_dir = os.path.join(self.tmp.name, 'sweep')
        code, out, _ = _invoke(['sweep', '--config', self.config, '--axis', 'AnswersPerQuestion',
                                '--values', '1,3', '--reps', '2', '--out', out_dir])
        self.assertEqual(code, 0, msg='sweep が正常終了しない')
        with open(os.path.join(out_dir, 'summary.csv'), encoding='utf-8') as f:
            lines = f.read().splitlines()
        self.assertEqual(len(lines), 1 + 2 * 3, msg='集計 CSV の行数が不正 (値2つ x 手法3つ)')
        self.assertIn('thresholds', json.loads(out), msg='目標正解率の到達点が表示されない')

    def test_hypotheses(self):
        out_dir = os.path.join(self.tmp.name, 'hypotheses')
        code, _, _ = _invoke(['hypotheses', '--config', self.config, '--seeds', '1', '--out', out_dir])
        self.assertEqual(code, 0, msg='hypotheses が正常終了しない')
        self.assertTrue(os.path.exists(os.path.join(out_dir, 'hypotheses.csv')), msg='仮説レポートが書き出されない')

    def test_errors(self):
        broken = os.path.join(self.tmp.name, 'broken.json')
        with open(broken, 'w', encoding='utf-8') as f:
            json.dump({'world': {}}, f)
        code, out, err = _invoke(['run', '--config', broken, '--out', os.path.join(self.tmp.name, 'x')])
        self.assertEqual(code, 2, msg='不正な設定で終了コードが 2 ではない')
        self.assertEqual(out, '', msg='エラー時に標準出力へ書き出した')
        self.assertEqual(json.loads(err.strip().splitlines()[-1])['error'], 'InvalidConfig',
                         msg='標準エラーに機械可読なエラーが出ない')

        code, _, err = _invoke(['sweep', '--config', self.config, '--axis', 'Temperature', '--values', '1'])
        self.assertEqual(code, 2, msg='未知の軸で終了コードが 2 ではない')
        self.assertEqual(json.loads(err.strip().splitlines()[-1])['error'], 'InvalidSpec', msg='未知の軸のエラーが不正')

        with self.assertRaises(SystemExit, msg='サブコマンド無しで終了しない'):
            _invoke([])


if __name__ == '__main__':
    unittest.main()
