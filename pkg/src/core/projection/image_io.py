""" Debug export of projected frames: 8-bit PGM images and index-map CSV """

import io

import numpy as np
import pandas as pd
from PIL import Image

from src.data.file_utils import atomic_write_bytes, atomic_write_text


def depth_to_gray(image):
    """ Linear 8-bit rendering of the depth over [0, max_range]; void pixels stay black """
    scaled = np.clip(image.depth / image.config.max_range, 0.0, 1.0) * 255.0
    return np.round(scaled).astype(np.uint8)


def write_pgm(gray, path):
    """ Binary PGM (P5), one byte per pixel """
    buffer = io.BytesIO()
    Image.fromarray(np.asarray(gray, dtype=np.uint8)).save(buffer, format='PPM')
    atomic_write_bytes(path, buffer.getvalue())


def read_pgm(path):
    with Image.open(path) as img:
        return np.array(img, dtype=np.uint8)


def index_map_frame(image):
    rows, cols = np.nonzero(image.valid)
    return pd.DataFrame({'row': rows, 'col': cols, 'index': image.index_map[rows, cols]})


def write_index_csv(image, path):
    """ One line per valid pixel: row, col, index of the source point """
    atomic_write_text(path, index_map_frame(image).to_csv(index=False))


def export_projection(image, equalized, out_prefix):
    """ Writes <prefix>_depth.pgm, <prefix>_equalized.pgm and <prefix>_index.csv, returns the paths """

    paths = {'depth': out_prefix + '_depth.pgm',
             'equalized': out_prefix + '_equalized.pgm',
             'index': out_prefix + '_index.csv'}
    write_pgm(depth_to_gray(image), paths['depth'])
    write_pgm(equalized.gray, paths['equalized'])
    write_index_csv(image, paths['index'])
    return paths
