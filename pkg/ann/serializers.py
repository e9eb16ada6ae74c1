from rest_framework import serializers

from .services.bench_harness import PRESETS

MODE_CHOICES = ["baseline-fp32", "scalar-quant", "aqr", "baseline", "sq"]


class SearchRequestSerializer(serializers.Serializer):
    vector = serializers.ListField(child=serializers.FloatField(), allow_empty=False)
    k = serializers.IntegerField(min_value=1, default=10)
    preset = serializers.ChoiceField(choices=list(PRESETS), required=False)
    early_termination = serializers.BooleanField(default=True)
    mode = serializers.ChoiceField(choices=MODE_CHOICES, required=False)
    n_coarse = serializers.IntegerField(min_value=1, required=False)
    n_rerank = serializers.IntegerField(min_value=0, required=False)
    tau_gap = serializers.FloatField(min_value=0, required=False)
    tau_ratio = serializers.FloatField(min_value=1, required=False)
    m_ef = serializers.IntegerField(min_value=1, required=False)
    ef_search = serializers.IntegerField(min_value=1, required=False)


class CandidateSerializer(serializers.Serializer):
    id = serializers.IntegerField()
    distance = serializers.FloatField()
    stage = serializers.CharField()


class SearchStatsSerializer(serializers.Serializer):
    coarse_evaluated = serializers.IntegerField()
    asymmetric_computed = serializers.IntegerField()
    exact_computed = serializers.IntegerField()
    early_terminated = serializers.BooleanField()
    short_result = serializers.BooleanField()


class SearchResponseSerializer(serializers.Serializer):
    mode = serializers.CharField()
    preset = serializers.CharField()
    results = CandidateSerializer(many=True)
    stats = SearchStatsSerializer()


class IndexInfoResponseSerializer(serializers.Serializer):
    mode = serializers.CharField()
    n = serializers.IntegerField()
    d = serializers.IntegerField()
    m = serializers.IntegerField()
    ef_construction = serializers.IntegerField()
    m0 = serializers.IntegerField()
    ef0 = serializers.IntegerField()
    max_layer = serializers.IntegerField()
    entry_point = serializers.IntegerField(allow_null=True)
    kernel_tier = serializers.CharField()
    memory = serializers.DictField()
    quantizer = serializers.DictField(required=False)


class HealthResponseSerializer(serializers.Serializer):
    status = serializers.CharField()
    index_loaded = serializers.BooleanField()
    kernel_tier = serializers.CharField()
