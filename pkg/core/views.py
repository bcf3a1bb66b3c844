import requests
from django.conf import settings
from django.db import connection
from drf_spectacular.utils import extend_schema, OpenApiExample
from rest_framework import serializers, status
from rest_framework.decorators import api_view, permission_classes
from rest_framework.permissions import AllowAny
from rest_framework.response import Response


class HealthCheckResponseSerializer(serializers.Serializer):
    status = serializers.CharField(help_text="Overall health status: healthy, degraded, or unhealthy")
    services = serializers.DictField(
        child=serializers.DictField(
            child=serializers.CharField(),
            help_text="Service status information"
        ),
        help_text="Detailed status of individual services",
    )


def _check_database():
    try:
        with connection.cursor() as cursor:
            cursor.execute("SELECT 1")
            cursor.fetchone()
        return "healthy", "Database connection successful"
    except Exception as e:
        return "unhealthy", str(e)


def _check_remote_denoiser():
    url = getattr(settings, "DVOTE_DENOISER_URL", "")
    if not url:
        return "skipped", "DVOTE_DENOISER_URL not configured"
    try:
        # The logits endpoint only accepts POST; any answer means it is up.
        response = requests.get(f"{url.rstrip('/')}/v1/logits", timeout=5)
        if response.status_code in (200, 204, 405):
            return "healthy", "Remote denoiser is responding"
        return "unhealthy", f"Remote denoiser returned status {response.status_code}"
    except requests.exceptions.RequestException as e:
        return "unhealthy", f"Remote denoiser connection failed: {e}"


@extend_schema(
    summary="Health check endpoint",
    description="Verifies the database connection and, when DVOTE_DENOISER_URL is set, the remote denoiser.",
    responses={
        200: HealthCheckResponseSerializer,
        503: HealthCheckResponseSerializer
    },
    examples=[
        OpenApiExample(
            'Healthy Response Example',
            value={
                "status": "healthy",
                "services": {
                    "database": {"status": "healthy", "details": "Database connection successful"},
                    "remote_denoiser": {"status": "skipped", "details": "DVOTE_DENOISER_URL not configured"},
                }
            },
            response_only=True
        ),
    ],
    tags=["health"],
)
@api_view(['GET'])
@permission_classes([AllowAny])
def health_check(request):
    checks = {
        'database': _check_database(),
        'remote_denoiser': _check_remote_denoiser(),
    }
    services = {name: {'status': state, 'details': details} for name, (state, details) in checks.items()}
    considered = [state for state, _ in checks.values() if state != 'skipped']
    healthy = sum(1 for state in considered if state == 'healthy')

    if healthy == len(considered):
        overall_status = 'healthy'
    elif healthy == 0:
        overall_status = 'unhealthy'
    else:
        overall_status = 'degraded'

    http_status = status.HTTP_503_SERVICE_UNAVAILABLE if overall_status == 'unhealthy' else status.HTTP_200_OK
    return Response({'status': overall_status, 'services': services}, status=http_status)
