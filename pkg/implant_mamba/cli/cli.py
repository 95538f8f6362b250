import json

import click
import numpy as np

from ..util.utils import json_safe


class Encoding(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, bytes):
            try:
                return o.decode()
            except UnicodeDecodeError:
                return str(o)
        return super().default(o)


def print_json(buf, format='text'):
    if format == 'json':
        print(json.dumps(json_safe(buf), indent=4, cls=Encoding))
    elif isinstance(buf, dict):
        width = max((len(str(k)) for k in buf), default=0)
        for key, value in buf.items():
            print(f'{str(key).ljust(width)}  {value}')
    else:
        print(buf)


class Command(click.Command):

    def __init__(self, *args, **kwargs):
        super(Command, self).__init__(*args, **kwargs)
        self.params[:0] = [
            click.Option(('seed', '--seed'), type=int, default=None, help='seed of every random stream'),
            click.Option(('threads', '--threads'), type=int, default=None,
                         help='worker / numba thread cap (default: IMPLANTMAMBA_THREADS or all cores)'),
            click.Option(('format', '--format'), type=click.Choice(['text', 'json']), default='text',
                         help='print format type'),
        ]
