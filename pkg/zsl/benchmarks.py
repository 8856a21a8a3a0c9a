"""
DEDN Toolkit Reference Numbers

Published attribute divisions, hyperparameter presets and result rows
for the CUB, SUN and AWA2 benchmarks. Accuracies are in percent; None
marks a value that was not reported.
"""

from collections import namedtuple


# name -> (D, cluster sizes in listed order)
ATTRIBUTE_CLUSTER_SIZES = {
    'cub': (312, [112, 87, 24, 40, 15, 34]),    # head, torso, wing, tail, leg, whole
    'sun': (102, [38, 27, 17, 20]),             # function, instance, environment, light
    'awa2': (85, [18, 14, 13, 40]),             # texture, organ, environment, abstract
}

# name -> {lambda_rc, lambda_e}
DATASET_PRESETS = {
    'cub': {'lambda_rc': 0.8, 'lambda_e': 0.9},
    'sun': {'lambda_rc': 0.95, 'lambda_e': 0.3},
    'awa2': {'lambda_rc': 0.8, 'lambda_e': 0.5},
}


Scores = namedtuple('Scores', ['t', 'u', 's', 'h'])
ResultRow = namedtuple('ResultRow', ['method', 'cub', 'sun', 'awa2'])


def _row(method, cub, sun, awa2):
    return ResultRow(method, *(Scores(*values) if values else None for values in (cub, sun, awa2)))


COMPARISON_RESULTS = [
    _row('f-CLSWGAN', (57.3, 43.7, 57.7, 49.7), (60.8, 42.6, 36.6, 39.4), (68.2, 57.9, 61.4, 59.6)),
    _row('f-VAEGAN-D2', (61.0, 48.4, 60.1, 53.6), (64.7, 45.1, 38.0, 41.3), (71.1, 57.6, 70.6, 63.5)),
    _row('TF-VAEGAN', (64.9, 52.8, 64.7, 58.1), (66.0, 45.6, 40.7, 43.0), (72.2, 59.8, 75.1, 66.6)),
    _row('E-PGN', (72.4, 52.0, 61.1, 56.2), None, (73.4, 52.6, 83.5, 64.6)),
    _row('CADA-VAE', (59.8, 51.6, 53.5, 52.4), (61.7, 47.2, 35.7, 40.6), (63.0, 55.8, 75.0, 63.9)),
    _row('FREE', (None, 55.7, 59.9, 57.7), (None, 47.4, 37.2, 41.7), (None, 60.4, 75.4, 67.1)),
    _row('SDGZSL', (75.5, 59.9, 66.4, 63.0), (62.4, 48.2, 36.1, 41.3), (72.1, 64.6, 73.6, 68.8)),
    _row('CE-GZSL', (77.5, 63.9, 66.8, 65.3), (63.3, 48.8, 38.6, 43.1), (70.4, 63.1, 78.6, 70.0)),
    _row('VS-Boost', (79.8, 68.0, 68.7, 68.4), (62.4, 49.2, 37.4, 42.5), (None, 67.9, 81.6, 74.1)),
    _row('SGMA', (71.0, 36.7, 71.3, 48.5), None, (68.8, 37.6, 87.1, 52.5)),
    _row('AREN', (71.8, 38.9, 78.7, 52.1), (60.6, 19.0, 38.8, 25.5), (67.9, 15.6, 92.9, 26.7)),
    _row('LFGAA', (67.6, 36.2, 80.9, 50.0), (61.5, 18.5, 40.0, 25.3), (68.1, 27.0, 93.4, 41.9)),
    _row('DAZLE', (66.0, 56.7, 59.6, 58.1), (59.4, 52.3, 24.3, 33.2), (67.9, 60.3, 75.7, 67.1)),
    _row('APN', (72.0, 65.3, 69.3, 67.2), (61.6, 41.9, 34.0, 37.6), (68.4, 57.1, 72.4, 63.9)),
    _row('DCN', (56.2, 28.4, 60.7, 38.7), (61.8, 25.5, 37.0, 30.2), (65.2, 25.5, 84.2, 39.1)),
    _row('HSVA', (62.8, 52.7, 58.3, 55.3), (63.8, 48.6, 39.0, 43.3), (None, 59.3, 76.6, 66.8)),
    _row('MSDN', (76.1, 68.7, 67.5, 68.1), (65.8, 52.2, 34.2, 41.3), (70.1, 62.0, 74.5, 67.7)),
    _row('DEDN', (77.4, 70.9, 70.0, 70.4), (67.4, 54.7, 36.0, 43.5), (75.8, 68.0, 76.5, 72.0)),
]

ABLATION_RESULTS = [
    _row('cExp w/o distill', (74.6, 62.4, 71.4, 66.6), (64.0, 41.6, 35.7, 38.4), (71.1, 62.8, 78.8, 69.9)),
    _row('fExp w/o distill', (75.5, 68.1, 67.9, 68.0), (64.0, 42.8, 35.5, 38.7), (71.1, 62.9, 79.1, 70.1)),
    _row('DEDN w/o distill', (75.7, 66.7, 70.7, 68.6), (65.2, 47.3, 35.0, 40.3), (72.1, 63.8, 79.3, 70.7)),
    _row('DAN w/o channel attention', (77.0, 58.7, 73.6, 65.3), (65.8, 48.5, 34.6, 40.4), (74.6, 61.7, 79.8, 69.6)),
    _row('DEDN w/o MAL', (75.8, 73.2, 62.5, 67.4), (66.0, 56.5, 34.3, 42.7), (73.1, 66.5, 72.4, 69.3)),
    _row('DAN w/o align', (77.6, 63.3, 72.8, 67.7), (65.5, 47.5, 35.3, 40.5), (74.6, 64.8, 76.8, 70.3)),
    _row('DEDN', (77.4, 70.9, 70.0, 70.4), (67.4, 54.7, 36.0, 43.5), (75.8, 68.0, 76.5, 72.0)),
]

PUBLISHED_RESULTS = {
    'comparison': COMPARISON_RESULTS,
    'ablation': ABLATION_RESULTS,
}
