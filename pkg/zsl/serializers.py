"""
DEDN Toolkit Serializers

This module defines serializers for every JSON document the toolkit
reads or writes: training configuration, synthetic-bundle and K-Means
settings, bundle metadata and the evaluation report.
"""

import json

from rest_framework import serializers

from .clustering import KmeansConfig
from .data import SynthConfig
from .exceptions import ConfigError
from .objectives import ClassificationLoss, LossWeights
from .trainer import TrainConfig


UINT64_MAX = 2 ** 64 - 1


def validated(serializer_class, data, error_class=ConfigError, label='configuration'):
    """
    Run ``serializer_class`` over ``data`` and return the created object.

    Raises:
        ``error_class`` carrying the serializer's field messages.
    """
    serializer = serializer_class(data=data)
    if not serializer.is_valid():
        raise error_class(f'Invalid {label}: {json.dumps(serializer.errors, sort_keys=True)}')
    return serializer.save()


class UnitIntervalField(serializers.FloatField):
    """Float in [0, 1]."""

    def __init__(self, **kwargs):
        kwargs.setdefault('min_value', 0.0)
        kwargs.setdefault('max_value', 1.0)
        super().__init__(**kwargs)


class LossWeightsSerializer(serializers.Serializer):
    """Serializer for the loss weights (beta, gamma) and the MAL margin."""

    beta = serializers.FloatField(min_value=0.0, help_text='Alignment weight')
    gamma = serializers.FloatField(min_value=0.0, help_text='Distillation weight')
    epsilon = serializers.FloatField(min_value=0.0, help_text='MAL margin')

    def create(self, validated_data):
        return LossWeights(**validated_data)


class TrainConfigSerializer(serializers.Serializer):
    """
    Serializer for the training configuration.

    Every field is required: callers merge flags and the config file over
    the defaults in ``settings.DEDN['TRAIN']`` first.
    """

    lr = serializers.FloatField(help_text='Learning rate')
    batch_size = serializers.IntegerField(min_value=1)
    momentum = serializers.FloatField(min_value=0.0)
    smoothing_alpha = serializers.FloatField(min_value=0.0)
    eps = serializers.FloatField()
    weight_decay = serializers.FloatField(min_value=0.0)
    epochs = serializers.IntegerField(min_value=0)
    seed = serializers.IntegerField(min_value=0, max_value=UINT64_MAX)
    weights = LossWeightsSerializer()
    lambda_rc = UnitIntervalField(help_text='Region/channel fusion weight')
    lambda_e = UnitIntervalField(help_text='Expert fusion weight')
    classification_loss = serializers.ChoiceField(choices=ClassificationLoss.choices)
    channel_attention = serializers.BooleanField()
    normalize_features = serializers.BooleanField()

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive.')
        return value

    def validate_eps(self, value):
        if value <= 0:
            raise serializers.ValidationError('eps must be positive.')
        return value

    def validate(self, attrs):
        """Momentum and smoothing must stay strictly below 1."""
        for name in ('momentum', 'smoothing_alpha'):
            if attrs[name] >= 1.0:
                raise serializers.ValidationError({
                    name: 'Must lie in [0, 1).'
                })
        return attrs

    def create(self, validated_data):
        weights = LossWeights(**validated_data.pop('weights'))
        return TrainConfig(weights=weights, **validated_data)


class SynthConfigSerializer(serializers.Serializer):
    """Serializer for synthetic-bundle generation settings."""

    n_per_class = serializers.IntegerField(min_value=1)
    k_seen = serializers.IntegerField(min_value=1)
    k_unseen = serializers.IntegerField(min_value=1)
    c = serializers.IntegerField(min_value=1)
    h = serializers.IntegerField(min_value=1)
    w = serializers.IntegerField(min_value=1)
    d = serializers.IntegerField(min_value=1)
    g = serializers.IntegerField(min_value=1)
    noise_sigma = serializers.FloatField(min_value=0.0)
    seed = serializers.IntegerField(min_value=0, max_value=UINT64_MAX)
    train_fraction = serializers.FloatField(min_value=0.0, max_value=1.0)
    class_separation = serializers.IntegerField(min_value=0)
    unseen_separation = serializers.IntegerField(min_value=0)

    def validate_train_fraction(self, value):
        if value == 0:
            raise serializers.ValidationError('At least some seen samples must be trained on.')
        return value

    def create(self, validated_data):
        return SynthConfig(**validated_data)


class KmeansConfigSerializer(serializers.Serializer):
    """Serializer for attribute clustering settings."""

    k = serializers.IntegerField(min_value=1, help_text='Number of clusters')
    seed = serializers.IntegerField(min_value=0, max_value=UINT64_MAX)
    max_iters = serializers.IntegerField(min_value=1)
    tol = serializers.FloatField(min_value=0.0)
    unit_norm = serializers.BooleanField()

    def create(self, validated_data):
        return KmeansConfig(**validated_data)


class BundleMetaSerializer(serializers.Serializer):
    """Serializer for a bundle's meta.json."""

    n = serializers.IntegerField(min_value=1)
    c = serializers.IntegerField(min_value=1)
    h = serializers.IntegerField(min_value=1)
    w = serializers.IntegerField(min_value=1)
    k = serializers.IntegerField(min_value=1)
    d = serializers.IntegerField(min_value=1)
    g = serializers.IntegerField(min_value=1)
    seen_classes = serializers.ListField(child=serializers.IntegerField(min_value=0))
    unseen_classes = serializers.ListField(
        child=serializers.IntegerField(min_value=0), allow_empty=True
    )
    train_indices = serializers.ListField(
        child=serializers.IntegerField(min_value=0), allow_empty=True
    )
    test_indices = serializers.ListField(
        child=serializers.IntegerField(min_value=0), allow_empty=True
    )


class ClassAccuracySerializer(serializers.Serializer):
    split = serializers.CharField()
    samples = serializers.IntegerField()
    correct = serializers.IntegerField()
    accuracy = serializers.FloatField()


class MetricsReportSerializer(serializers.Serializer):
    """
    Serializer for the evaluation report.

    Renders GzslMetrics plus the fusion weights it was computed with;
    per-class entries are keyed by class id.
    """

    mode = serializers.CharField()
    lambda_e = serializers.FloatField()
    lambda_rc = serializers.FloatField()
    t = serializers.FloatField()
    u = serializers.FloatField(allow_null=True)
    s = serializers.FloatField(allow_null=True)
    h = serializers.FloatField(allow_null=True)
    micro_u = serializers.FloatField(allow_null=True)
    micro_s = serializers.FloatField(allow_null=True)
    per_class = serializers.DictField(child=ClassAccuracySerializer())
