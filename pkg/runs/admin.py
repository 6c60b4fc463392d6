from django.contrib import admin

from .models import Artifact, Run


class ArtifactAdminInline(admin.TabularInline):
    model = Artifact
    readonly_fields = ('sha256',)


class RunAdmin(admin.ModelAdmin):
    inlines = (ArtifactAdminInline,)

    readonly_fields = ('run_id', 'started', 'finished',
                       'git_describe', 'timings',)

    fields = ('run_id', 'command', 'seed', 'status', 'started',
              'finished', 'git_describe', 'run_dir', 'options',
              'config', 'timings', 'error',)

    list_display = ('run_id', 'command', 'seed', 'status',
                    'started',)

    ordering = ('-started',)


admin.site.register(Run, RunAdmin)
