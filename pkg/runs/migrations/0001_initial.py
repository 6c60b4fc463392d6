# Generated by Django 4.2.16

from django.db import migrations, models
import django.db.models.deletion


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Run',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(editable=False, max_length=32)),
                ('command', models.CharField(max_length=40)),
                ('seed', models.IntegerField(blank=True, null=True)),
                ('options', models.JSONField(default=dict)),
                ('config', models.JSONField(default=dict)),
                ('git_describe', models.CharField(blank=True, default='', max_length=80)),
                ('run_dir', models.CharField(blank=True, default='', max_length=500)),
                ('status', models.CharField(choices=[('running', 'Running'), ('succeeded', 'Succeeded'), ('failed', 'Failed')], default='running', max_length=10)),
                ('error', models.TextField(blank=True, default='')),
                ('started', models.DateTimeField(auto_now_add=True)),
                ('finished', models.DateTimeField(blank=True, null=True)),
                ('timings', models.JSONField(default=dict)),
            ],
        ),
        migrations.CreateModel(
            name='Artifact',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('role', models.CharField(choices=[('consumed', 'Consumed'), ('produced', 'Produced')], max_length=10)),
                ('kind', models.CharField(max_length=20)),
                ('name', models.CharField(max_length=100)),
                ('path', models.CharField(max_length=500)),
                ('sha256', models.CharField(editable=False, max_length=64)),
                ('content_hash', models.CharField(blank=True, default='', max_length=64)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='artifacts', to='runs.run')),
            ],
        ),
    ]
