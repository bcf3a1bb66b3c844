from rest_framework import mixins, permissions, viewsets, status, filters
from rest_framework.response import Response
from rest_framework.decorators import action
from django_filters.rest_framework import DjangoFilterBackend
from drf_spectacular.utils import extend_schema, extend_schema_view

from core.pagination import CustomLimitOffsetPagination
from harness.models import EvaluationRun
from harness.serializers import EvaluationRunSerializer, EvaluationRunCreateSerializer, QuestionResultSerializer


@extend_schema_view(
	list=extend_schema(summary="List evaluation runs", tags=["runs"]),
	retrieve=extend_schema(summary="Retrieve an evaluation run by UUID", tags=["runs"]),
)
class EvaluationRunViewSet(mixins.CreateModelMixin, viewsets.ReadOnlyModelViewSet):
	queryset = EvaluationRun.objects.all()
	serializer_class = EvaluationRunSerializer
	permission_classes = [permissions.IsAuthenticatedOrReadOnly]
	filter_backends = [DjangoFilterBackend, filters.OrderingFilter]
	filterset_fields = ['method', 'status']
	ordering_fields = ['created_at', 'accuracy', 'mean_steps']
	pagination_class = CustomLimitOffsetPagination
	lookup_field = "uuid"

	def get_queryset(self):
		if getattr(self, 'action', None) == 'list':
			return EvaluationRun.objects.defer('summary')
		return EvaluationRun.objects.all()

	@extend_schema(
		request=EvaluationRunCreateSerializer,
		responses={202: EvaluationRunSerializer},
		summary="Queue an evaluation of a method on an inline task list",
		tags=["runs"],
	)
	def create(self, request, *args, **kwargs):
		serializer = EvaluationRunCreateSerializer(data=request.data)
		serializer.is_valid(raise_exception=True)
		data = serializer.validated_data
		run = EvaluationRun.objects.create(
			creator=request.user,
			label=data['method'],
			method=data['method'],
			config=data['config'],
		)
		from harness.tasks import run_evaluation_task
		run_evaluation_task.delay(
			run.id,
			data['tasks'],
			data['method'],
			config=data['config'],
			consistency=data['consistency'],
			epsilon=data['epsilon'],
		)
		return Response(EvaluationRunSerializer(run).data, status=status.HTTP_202_ACCEPTED)

	@extend_schema(responses=QuestionResultSerializer(many=True), summary="Per-question results of a run", tags=["runs"])
	@action(detail=True, methods=['get'])
	def results(self, request, uuid=None):
		run = self.get_object()
		page = self.paginate_queryset(run.results.all())
		serializer = QuestionResultSerializer(page, many=True)
		return self.get_paginated_response(serializer.data)
