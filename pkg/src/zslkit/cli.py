"""Command-line client.

Every subcommand builds a service request, runs it (in-process by default,
against a remote service with --server) and prints the JSON response.

Exit codes: 0 success, 1 numeric/assertion failure (including a failed
gradient check), 2 usage or input errors.
"""

from __future__ import annotations

import sys

import click

from .errors import ConfigError, InputError, NumericError, ZslkitError
from .service import handlers, models

NORM_CHOICES = {"rw": "random_walk", "sym": "sym"}

_ROUTES = {
    models.BuildGraphRequest: ("/graph/build", handlers.run_build_graph, models.BuildGraphResponse),
    models.TrainRequest: ("/train", handlers.run_train, models.TrainResponse),
    models.EvalRequest: ("/eval", handlers.run_eval, models.EvalResponse),
    models.GradCheckRequest: ("/gradcheck", handlers.run_gradcheck, models.GradCheckResponse),
    models.SynthRequest: ("/synth", handlers.run_synth, models.SynthResponse),
}


def _dispatch(ctx, request):
    """Run a request locally or against --server; exit codes on failure."""
    path, handler, response_model = _ROUTES[type(request)]
    server = ctx.obj.get("server")
    if ctx.obj.get("verbose"):
        click.echo(f"POST {path} {request.model_dump_json()}", err=True)
    if server is None:
        try:
            return handler(request)
        except (InputError, ConfigError) as exc:
            raise click.UsageError(str(exc)) from exc
        except NumericError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except ZslkitError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    import json

    import httpx

    try:
        resp = httpx.post(server.rstrip("/") + path,
                          json=request.model_dump(), timeout=600.0)
    except httpx.HTTPError as exc:
        raise click.UsageError(f"cannot reach server {server}: {exc}") from exc
    if resp.status_code in (400, 422):
        detail = resp.json().get("detail", resp.text)
        raise click.UsageError(detail if isinstance(detail, str) else json.dumps(detail))
    if resp.status_code != 200:
        click.echo(f"server error {resp.status_code}: {resp.text}", err=True)
        sys.exit(1)
    return response_model.model_validate(resp.json())


def _norm_option():
    return click.option("--norm", "norm", type=click.Choice(sorted(NORM_CHOICES)),
                        default="rw", show_default=True,
                        help="Adjacency normalization: random-walk or symmetric.")


def _seed_option():
    return click.option("--seed", type=int, default=0, show_default=True,
                        envvar="ZSLKIT_SEED",
                        help="Random seed (falls back to $ZSLKIT_SEED).")


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Send commands to a running zslkit service instead of in-process.")
@click.option("-v", "--verbose", is_flag=True, help="Echo requests to stderr.")
@click.pass_context
def main(ctx, server, verbose):
    """Zero-shot classifier synthesis over a semantic class graph."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["verbose"] = verbose


@main.command("build-graph")
@click.option("--classes", required=True, type=click.Path(), help="Class list file.")
@click.option("--taxonomy", required=True, type=click.Path(), help="Taxonomy edge list.")
@click.option("--word-vectors", required=True, type=click.Path(), help="GloVe-style text vectors.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--k", type=click.IntRange(min=1), default=2, show_default=True,
              help="Neighbors per node.")
@click.option("--alpha", type=click.FloatRange(min=0, min_open=True), default=0.5,
              show_default=True, help="Distance threshold for k-NN edges.")
@_norm_option()
@click.pass_context
def build_graph(ctx, classes, taxonomy, word_vectors, out, k, alpha, norm):
    """Build the merged class graph and write its exports plus stats."""
    req = models.BuildGraphRequest(
        class_list=classes, taxonomy=taxonomy, word_vectors=word_vectors,
        out_dir=out, k=k, alpha=alpha, norm_mode=NORM_CHOICES[norm],
    )
    resp = _dispatch(ctx, req)
    click.echo(resp.model_dump_json(indent=2))


@main.command()
@click.option("--graph", required=True, type=click.Path(), help="Directory from build-graph.")
@click.option("--classes", required=True, type=click.Path())
@click.option("--word-vectors", required=True, type=click.Path())
@click.option("--gt", required=True, type=click.Path(), help="Seen-class classifier file.")
@click.option("--out", required=True, type=click.Path(), help="Checkpoint output path.")
@click.option("--loss-log", type=click.Path(), default=None, help="Loss curve CSV path.")
@click.option("--model", type=click.IntRange(1, 5), default=4, show_default=True)
@click.option("--epochs", type=click.IntRange(min=0), default=300, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=0.001,
              show_default=True)
@click.option("--wd", type=click.FloatRange(min=0), default=0.0005, show_default=True,
              help="Weight decay.")
@click.option("--dropout", type=click.FloatRange(min=0, max=1, max_open=True),
              default=0.5, show_default=True)
@click.option("--k", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--alpha", type=click.FloatRange(min=0, min_open=True), default=0.5,
              show_default=True)
@click.option("--stop-loss", type=click.FloatRange(min=0, min_open=True), default=None,
              help="Stop early once the training loss drops below this value.")
@_norm_option()
@_seed_option()
@click.pass_context
def train(ctx, graph, classes, word_vectors, gt, out, loss_log, model, epochs,
          lr, wd, dropout, k, alpha, stop_loss, norm, seed):
    """Train a model on the built graph and write a checkpoint."""
    req = models.TrainRequest(
        graph_dir=graph, class_list=classes, word_vectors=word_vectors,
        gt_classifiers=gt, out_checkpoint=out, loss_log=loss_log,
        stop_loss=stop_loss,
        config=models.TrainSettings(
            epochs=epochs, lr=lr, weight_decay=wd, dropout=dropout,
            model_id=model, k=k, alpha=alpha,
            norm_mode=NORM_CHOICES[norm], seed=seed,
        ),
    )
    resp = _dispatch(ctx, req)
    click.echo(resp.model_dump_json(indent=2))


@main.command("eval")
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Checkpoint to evaluate (needs --graph and --word-vectors).")
@click.option("--classifiers", type=click.Path(), default=None,
              help="Evaluate a classifier file directly instead of a checkpoint.")
@click.option("--graph", type=click.Path(), default=None)
@click.option("--classes", required=True, type=click.Path())
@click.option("--word-vectors", type=click.Path(), default=None)
@click.option("--features", required=True, type=click.Path())
@click.option("--setting", type=click.Choice(["conventional", "generalized"]),
              default="conventional", show_default=True)
@click.option("--per-class", is_flag=True, help="Include per-class Hit@1 in the output.")
@click.pass_context
def eval_cmd(ctx, checkpoint, classifiers, graph, classes, word_vectors,
             features, setting, per_class):
    """Score eval samples and print the Hit@k report as JSON."""
    req = models.EvalRequest(
        checkpoint=checkpoint, classifiers=classifiers, graph_dir=graph,
        class_list=classes, word_vectors=word_vectors, features=features,
        setting=setting, per_class=per_class,
    )
    resp = _dispatch(ctx, req)
    click.echo(resp.model_dump_json(indent=2, exclude_none=True))


@main.command()
@click.option("--model", type=click.IntRange(1, 5), default=4, show_default=True)
@_seed_option()
@click.pass_context
def gradcheck(ctx, model, seed):
    """Compare analytic gradients to finite differences; exit 1 on failure."""
    req = models.GradCheckRequest(model_id=model, seed=seed)
    resp = _dispatch(ctx, req)
    click.echo(resp.model_dump_json(indent=2))
    if not resp.passed:
        sys.exit(1)


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Fixture output directory.")
@_seed_option()
@click.option("--n-seen", type=click.IntRange(min=2), default=20, show_default=True)
@click.option("--n-unseen", type=click.IntRange(min=2), default=10, show_default=True)
@click.option("--embed-dim", type=click.IntRange(min=2), default=16, show_default=True)
@click.option("--classifier-dim", type=click.IntRange(min=2), default=32, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0), default=0.05, show_default=True)
@click.option("--samples-per-class", type=click.IntRange(min=1), default=20,
              show_default=True)
@click.pass_context
def synth(ctx, out, seed, n_seen, n_unseen, embed_dim, classifier_dim, noise,
          samples_per_class):
    """Generate a synthetic zero-shot fixture directory."""
    req = models.SynthRequest(
        out_dir=out, seed=seed, n_seen=n_seen, n_unseen=n_unseen,
        embed_dim=embed_dim, classifier_dim=classifier_dim, noise=noise,
        samples_per_class=samples_per_class,
    )
    resp = _dispatch(ctx, req)
    click.echo(resp.model_dump_json(indent=2))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8490, show_default=True)
def serve(host, port):
    """Run the zslkit service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
