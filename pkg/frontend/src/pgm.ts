/** Decoder for the binary PGM ("P5") frames the hub serves. */

export class PgmFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PgmFormatError";
  }
}

export interface GrayImage {
  width: number;
  height: number;
  maxval: number;
  /** Row-major, one byte per pixel. */
  pixels: Uint8Array;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

/** Reads the three header integers after "P5", skipping whitespace and
 * '#' comment lines, and returns them with the raster offset. */
function readHeader(bytes: Uint8Array): { values: number[]; offset: number } {
  const values: number[] = [];
  let i = 2; // past the magic
  while (values.length < 3) {
    while (i < bytes.length && WHITESPACE.has(bytes[i]!)) i += 1;
    if (bytes[i] === 0x23) {
      // comment runs to end of line
      while (i < bytes.length && bytes[i] !== 0x0a) i += 1;
      continue;
    }
    let token = "";
    while (i < bytes.length && !WHITESPACE.has(bytes[i]!)) {
      token += String.fromCharCode(bytes[i]!);
      i += 1;
    }
    if (!/^\d+$/.test(token)) {
      throw new PgmFormatError(`bad header token ${JSON.stringify(token)}`);
    }
    values.push(Number(token));
  }
  // exactly one whitespace byte separates the header from the raster
  if (i >= bytes.length || !WHITESPACE.has(bytes[i]!)) {
    throw new PgmFormatError("missing raster separator");
  }
  return { values, offset: i + 1 };
}

export function decodePgm(bytes: Uint8Array): GrayImage {
  if (bytes.length < 2 || bytes[0] !== 0x50 || bytes[1] !== 0x35) {
    throw new PgmFormatError("not a binary PGM (missing P5 magic)");
  }
  const { values, offset } = readHeader(bytes);
  const [width, height, maxval] = values as [number, number, number];
  if (width < 1 || height < 1) {
    throw new PgmFormatError(`bad dimensions ${width}x${height}`);
  }
  if (maxval < 1 || maxval > 255) {
    throw new PgmFormatError(`unsupported maxval ${maxval}`);
  }
  const expected = width * height;
  const raster = bytes.subarray(offset, offset + expected);
  if (raster.length !== expected) {
    throw new PgmFormatError(
      `raster holds ${raster.length} bytes, expected ${expected}`,
    );
  }
  return { width, height, maxval, pixels: new Uint8Array(raster) };
}

/** Expands the gray raster to RGBA for a canvas 2D context. */
export function grayToImageData(image: GrayImage): ImageData {
  const out = new ImageData(image.width, image.height);
  const rgba = out.data;
  for (let i = 0; i < image.pixels.length; i += 1) {
    const v = image.pixels[i]!;
    const j = i * 4;
    rgba[j] = v;
    rgba[j + 1] = v;
    rgba[j + 2] = v;
    rgba[j + 3] = 255;
  }
  return out;
}
