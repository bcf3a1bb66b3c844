from django.contrib import admin

from .models import EvaluationRun, QuestionResult


class QuestionResultInline(admin.TabularInline):
    model = QuestionResult
    extra = 0


@admin.register(EvaluationRun)
class EvaluationRunAdmin(admin.ModelAdmin):
    list_display = ('label', 'method', 'status', 'accuracy', 'mean_steps', 'created_at')
    list_filter = ('method', 'status')
    inlines = [QuestionResultInline]


admin.site.register(QuestionResult)
