import json
import os
import sys

import click
sys.path.append(os.getcwd())

from implant_mamba.cli.dataset import cli as dataset_cli
from implant_mamba.cli.train import cli as train_cli
from implant_mamba.cli.verify import cli as verify_cli
from implant_mamba.util.exceptions import ImplantMambaException


class Harness(click.CommandCollection):
    """ every ImplantMambaException leaves as one JSON line on stderr and its error code as exit status """

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except ImplantMambaException as E:
            click.echo(json.dumps(E.to_dict()), err=True)
            ctx.exit(int(E.code))


commands = Harness(sources=[dataset_cli, train_cli, verify_cli],
                   help='ImplantMamba harness: generate, train, eval, ablate, gradcheck, param-count, bench-scan')


def cli():
    commands()


if __name__ == '__main__':
    cli()
