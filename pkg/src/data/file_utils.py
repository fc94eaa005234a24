import os
import tempfile
from contextlib import contextmanager


@contextmanager
def atomic_output(path, mode='w', **open_kwargs):
    """
    Opens a temporary file next to 'path' and moves it into place on success.
    Args:
        path: final destination of the file.
        mode: 'w' for text or 'wb' for binary output.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.{}.'.format(os.path.basename(path)), suffix='.tmp')
    try:
        with os.fdopen(fd, mode, **open_kwargs) as tmp_file:
            yield tmp_file
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def atomic_write_bytes(path, payload):
    with atomic_output(path, 'wb') as f:
        f.write(payload)


def atomic_write_text(path, text):
    with atomic_output(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
